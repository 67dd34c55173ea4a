#include <doctest.h>

#include "refforge/errors.hpp"
#include "refforge/injector.hpp"
#include "refforge/rng.hpp"
#include "refforge/textutil.hpp"
#include "test_support.hpp"

using namespace refforge;

TEST_CASE("insert_comment spec examples") {
  const auto py = comment_syntax_for(Language::python);
  const auto out = insert_comment("x = 1", py, 0, "!! zz @@");
  CHECK(out.text == "# !! zz @@\nx = 1");
  CHECK(out.text.substr(out.seq_begin, out.seq_end - out.seq_begin) == "!! zz @@");
}

TEST_CASE("insert_comment copies the anchor line's indentation") {
  const auto cpp = comment_syntax_for(Language::cpp);
  const auto out = insert_comment("int f() {\n    return 1;\n}\n", cpp, 1, "seq");
  CHECK(out.text == "int f() {\n    // seq\n    return 1;\n}\n");
}

TEST_CASE("newlines in the sequence are flattened, round trip still exact") {
  const auto cpp = comment_syntax_for(Language::cpp);
  const std::string code = "a();\nb();\n";
  const auto out = insert_comment(code, cpp, 1, "one\ntwo\rthree");
  CHECK(out.seq_text == "one two three");
  CHECK(strip_injected(out) == code);
}

TEST_CASE("strip round trip over random printable sequences") {
  const auto r = testing::make_record();
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::string seq;
    const int len = 1 + rng.next_index(40);
    for (int i = 0; i < len; ++i) seq.push_back(static_cast<char>(32 + rng.next_index(95)));
    for (Language lang : {Language::python, Language::java, Language::cpp, Language::php}) {
      const auto crafted =
          insert_comment(r.correct_code, comment_syntax_for(lang), r.anchor_line, seq);
      CHECK(strip_injected(crafted) == r.correct_code);
      CHECK(split_lines(crafted.text).size() == split_lines(r.correct_code).size() + 1);
    }
  }
}

TEST_CASE("strip detects a corrupted span") {
  const auto cpp = comment_syntax_for(Language::cpp);
  auto out = insert_comment("a();\n", cpp, 0, "payload");
  out.text = out.text.substr(0, out.text.size() / 2);
  CHECK_THROWS_AS(strip_injected(out), Error);
  auto tampered = insert_comment("a();\n", cpp, 0, "payload");
  tampered.text[tampered.seq_begin] = 'X';
  CHECK_THROWS_AS(strip_injected(tampered), Error);
}

TEST_CASE("anchor out of range") {
  const auto cpp = comment_syntax_for(Language::cpp);
  CHECK_THROWS_AS(insert_comment("a();\n", cpp, 5, "s"), Error);
  CHECK_THROWS_AS(insert_comment("a();\n", cpp, -1, "s"), Error);
}

TEST_CASE("sanitize_identifier") {
  CHECK(sanitize_identifier("abc") == "abc");
  CHECK(sanitize_identifier("9lives") == "_9lives");
  CHECK(sanitize_identifier("a b") == "a_b");
  CHECK(sanitize_identifier("a$b c") == "a_b_c");
  CHECK(sanitize_identifier("!!!") == "___");
  CHECK_THROWS_AS(sanitize_identifier(""), Error);
}

TEST_CASE("rename_variable substitutes every whole-word occurrence") {
  const std::string code = "int len = 0; use(len); int lenx = len;";
  const auto out = rename_variable(code, Language::cpp, "len", "a$b c");
  CHECK(out.text == "int a_b_c = 0; use(a_b_c); int lenx = a_b_c;");
  CHECK(strip_injected(out) == code);
}

TEST_CASE("rename_variable errors") {
  CHECK_THROWS_AS(rename_variable("int x;", Language::cpp, "missing", "seq"), Error);
  // sanitized name already present in the code
  CHECK_THROWS_AS(rename_variable("int a_b = 1; use(a_b);", Language::cpp, "use", "a b"), Error);
}

TEST_CASE("rename keeps the token count") {
  const std::string code = "x = x + y\nprint(x)\n";
  const auto out = rename_variable(code, Language::python, "x", "zz");
  CHECK(count_occurrences(out.text, "zz") == 3);
  CHECK(count_occurrences(out.text, "y") == 1);
}

TEST_CASE("rename_target_identifier picks the most frequent identifier") {
  const auto r = testing::make_record();
  // "s" and "i" appear three times each; "a" and "n" twice; ties go to the
  // earliest first occurrence.
  const std::string target = rename_target_identifier(r);
  CHECK((target == "s" || target == "i" || target == "sum" || target == "a" || target == "n"));
  const auto crafted = rename_variable(r.correct_code, r.language, target, "q q q");
  CHECK(strip_injected(crafted) == r.correct_code);
}
