"""Smoke tests for the python bindings."""

import pytest

import refforge as rf


def make_record():
    r = rf.ProblemRecord()
    r.id = "sum-loop"
    r.language = rf.Language.cpp
    r.question = "how to sum an int array in cpp"
    r.correct_code = (
        "int sum(const int* a, int n) {\n"
        "  int s = 0;\n"
        "  for (int i = 0; i < n; i++) {\n"
        "    s += a[i];\n"
        "  }\n"
        "  return s;\n"
        "}\n"
    )
    r.explanation = "iterates once"
    vc = rf.VulnClass()
    vc.name = rf.VulnClassName.ArrayViolation
    vc.cwe_ids = ["CWE-125"]
    r.vuln_class = vc
    e = rf.VulnEdit()
    e.original = "i < n"
    e.replacement = "i <= n"
    e.description = "off by one"
    r.edit = e
    r.anchor_line = 2
    return r


def make_space():
    s = rf.PromptSpace()
    s.templates = [rf.PromptTemplate("t1", "{{INSTRUCTION}}\nQ: {{QUERY}}\n{{REFERENCE}}\nA:\n")]
    s.instructions = ["answer with code"]
    s.queries = ["sum an int array"]
    return s


def test_validate_and_apply_edit():
    r = make_record()
    assert rf.validate_record(r) == []
    vuln = rf.apply_edit(r.correct_code, r.edit)
    assert "i <= n" in vuln
    assert rf.contains_tvul("```\n" + vuln + "```", r)
    assert not rf.contains_tvul("```\n" + r.correct_code + "```", r)


def test_assemble_and_sampling():
    s = make_space()
    assert rf.space_size(s) == 1
    out = rf.assemble_at(s, 0, 0, 0, "REF")
    assert "REF" in out.text
    rng = rf.Rng(7)
    inputs = rf.sample_inputs(s, "REF", 3, rng)
    assert len(inputs) == 3


def test_injection_round_trip():
    r = make_record()
    syntax = rf.comment_syntax_for(rf.Language.cpp)
    crafted = rf.insert_comment(r.correct_code, syntax, r.anchor_line, "zz qq !!")
    assert "// zz qq !!" in crafted.text
    assert rf.strip_injected(crafted) == r.correct_code
    assert rf.sanitize_identifier("a$b c") == "a_b_c"


def test_renderer_arithmetic():
    assert rf.render_mean_2dp([77.14, 80.00, 94.29, 85.71]) == "84.29"
    assert rf.render_ratio_percent(
        [33.27, 33.30, 33.72, 32.13], [923.66, 975.22, 986.23, 965.39]
    ) == "3.44"


def test_tiny_model_train_and_decode(tmp_path):
    cfg = rf.TinyLMConfig()
    cfg.d_model = 16
    cfg.n_layers = 1
    cfg.n_heads = 2
    cfg.context = 64
    cfg.param_seed = 3
    cfg.training.learning_rate = 4e-3
    cfg.training.epochs = 150
    cfg.training.batch_size = 1

    model, report = rf.train_tiny(cfg, [("Q: two plus two\nA:", "4")])
    assert report.final_loss < report.initial_loss

    p = rf.DecodeParams()
    p.max_new_tokens = 8
    out1 = model.generate(rf.encode_prompt("Q: two plus two\nA:"), p)
    out2 = model.generate(rf.encode_prompt("Q: two plus two\nA:"), p)
    assert out1 == out2

    path = str(tmp_path / "m.ckpt")
    model.save(path)
    back = rf.TinyLM.load(path)
    assert back.detokenize(back.generate(rf.encode_prompt("Q: two plus two\nA:"), p)) == \
        model.detokenize(out1)


def test_gradient_surface():
    cfg = rf.TinyLMConfig()
    cfg.d_model = 16
    cfg.n_layers = 1
    cfg.n_heads = 2
    cfg.context = 64
    model = rf.TinyLM(cfg)
    prefix = rf.encode_prompt("hello")
    target = rf.encode_completion("hi")
    rows = model.onehot_gradient(prefix, target, [1, 2])
    assert len(rows) == 2
    assert len(rows[0]) == model.vocab_size()
    loss = model.continuation_loss(prefix, target)
    assert loss > 0.0


def test_error_mapping():
    with pytest.raises(rf.RefforgeError):
        rf.apply_edit("abc", _edit("zzz", "y"))


def _edit(orig, repl):
    e = rf.VulnEdit()
    e.original = orig
    e.replacement = repl
    return e
