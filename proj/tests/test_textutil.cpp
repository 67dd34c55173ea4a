#include <doctest.h>

#include "refforge/textutil.hpp"

using namespace refforge;

TEST_CASE("normalize_ws strips and collapses") {
  CHECK(normalize_ws("  x =   1\t;") == "x = 1 ;");
  CHECK(normalize_ws("") == "");
  CHECK(normalize_ws("\t \t") == "");
}

TEST_CASE("normalize_code works per line") {
  CHECK(normalize_code("  a\n\tb  c\n") == "a\nb c");
}

TEST_CASE("normalized map points back at raw bytes") {
  const std::string raw = "  foo(  x ,y )\n  bar\n";
  const NormalizedMap nm = normalize_code_mapped(raw);
  CHECK(nm.text.substr(0, 5) == "foo( ");
  CHECK(raw[nm.raw_index[0]] == 'f');
  const size_t bar = nm.text.find("bar");
  CHECK(raw[nm.raw_index[bar]] == 'b');
}

TEST_CASE("content words and jaccard") {
  const auto a = content_words("How to fix the DirectX histogram error");
  CHECK(a.count("directx") == 1);
  CHECK(a.count("the") == 0);
  CHECK(jaccard(a, a) == doctest::Approx(1.0));
  const auto b = content_words("completely unrelated sentence about cooking");
  CHECK(jaccard(a, b) == doctest::Approx(0.0));
}

TEST_CASE("line_starts") {
  const auto s = line_starts("ab\ncd\n");
  REQUIRE(s.size() == 2);
  CHECK(s[0] == 0);
  CHECK(s[1] == 3);
}
