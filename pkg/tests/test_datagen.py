import json

import pytest

from thinkgrpo.datagen import (
    BATCH_SIZE,
    FailingProvider,
    HttpProvider,
    MockProvider,
    ProviderError,
    blocked_term,
    build_corpus,
    build_generation_prompt,
    call_with_retries,
    dedup_key,
    default_seed_examples,
    parse_provider_output,
    validate_record,
)
from thinkgrpo.errors import ConfigError
from thinkgrpo.tasks import ScenarioRecord, read_jsonl


def _valid(i):
    return {
        "id": f"x{i}",
        "situation": f"situation {i}",
        "question": "what now?",
        "options": [{"id": "A", "text": "stay"}, {"id": "B", "text": "go"}],
        "answer": "B",
        "rationale": "because",
    }


def test_prompt_contains_every_seed_and_asks_for_a_json_list_of_ten():
    seeds = default_seed_examples(10)
    prompt = build_generation_prompt(seeds)
    for s in seeds:
        assert json.dumps(s.to_json(), sort_keys=True) in prompt
    assert "JSON list of 10" in prompt and "Write 10 new items" in prompt
    with pytest.raises(ConfigError):
        build_generation_prompt([])


def test_parse_valid_batch():
    records, rejects = parse_provider_output("sure:\n" + json.dumps([_valid(i) for i in range(10)]) + "\nbye")
    assert len(records) == 10 and rejects == []
    assert all(isinstance(r, ScenarioRecord) for r in records)


def test_parse_rejects_only_bad_elements():
    items = [_valid(i) for i in range(4)]
    del items[2]["answer"]
    items[3]["options"] = [{"id": "A", "text": "only one"}]
    records, rejects = parse_provider_output(json.dumps(items))
    assert [r.id for r in records] == ["x0", "x1"]
    assert [r.index for r in rejects] == [2, 3]


def test_parse_prose_without_json_rejects_batch():
    records, rejects = parse_provider_output("I cannot produce [that] today.")
    assert records == [] and len(rejects) == 1 and rejects[0].index is None


def test_validate_record_checks_gold_and_options():
    bad = _valid(0)
    bad["answer"] = "Z"
    with pytest.raises(ConfigError):
        validate_record(bad)
    bad = _valid(0)
    bad["options"][0]["text"] = " "
    with pytest.raises(ConfigError):
        validate_record(bad)


def test_dedup_key_ignores_case_punctuation_and_spacing():
    a = validate_record({**_valid(0), "situation": "The road is  ICY!"})
    b = validate_record({**_valid(1), "situation": "the road is icy"})
    assert dedup_key(a) == dedup_key(b)
    c = validate_record({**_valid(2), "situation": "the road is icy", "question": "what else?"})
    assert dedup_key(a) != dedup_key(c)


def test_blocklist_matches_whole_words():
    rec = validate_record({**_valid(0), "situation": "a bomb threat"})
    assert blocked_term(rec, ["bomb"]) == "bomb"
    assert blocked_term(validate_record({**_valid(0), "situation": "a bombastic speech"}), ["bomb"]) is None


def test_mock_corpus_takes_three_calls(tmp_path):
    provider = MockProvider()
    corpus = build_corpus(provider, 20, 5, seed=1, out_dir=tmp_path)
    r = corpus.report
    assert provider.calls == 3 and r.batches == 3 and r.status == "ok"
    assert (r.train, r.val, r.surplus) == (20, 5, 5)
    keys_train = {dedup_key(x) for x in corpus.train}
    keys_val = {dedup_key(x) for x in corpus.val}
    assert len(keys_train) == 20 and len(keys_val) == 5 and not keys_train & keys_val
    assert [x.content() for x in read_jsonl(tmp_path / "train.jsonl")] == [x.content() for x in corpus.train]
    assert json.loads((tmp_path / "build_report.json").read_text())["status"] == "ok"


def test_corpus_build_is_deterministic(tmp_path):
    build_corpus(MockProvider(seed=4), 20, 5, seed=2, out_dir=tmp_path / "a")
    build_corpus(MockProvider(seed=4), 20, 5, seed=2, out_dir=tmp_path / "b")
    for name in ("train.jsonl", "val.jsonl", "build_report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_repeating_provider_stalls():
    provider = MockProvider("repeat")
    corpus = build_corpus(provider, 20, 5, stall_limit=5)
    r = corpus.report
    assert r.status == "stalled"
    assert r.accepted == BATCH_SIZE and r.batches == 6
    assert r.duplicates == 5 * BATCH_SIZE
    assert not {dedup_key(x) for x in corpus.train} & {dedup_key(x) for x in corpus.val}


def test_retries_back_off_then_give_up():
    delays = []
    provider = FailingProvider()
    with pytest.raises(ProviderError):
        call_with_retries(provider, "p", attempts=3, base_delay=1.0, sleep=delays.append)
    assert provider.calls == 3 and delays == [1.0, 2.0]


def test_retry_recovers_after_transient_failure():
    class Flaky:
        calls = 0

        def generate(self, prompt):
            self.calls += 1
            if self.calls < 2:
                raise TimeoutError("slow")
            return "ok"

    delays = []
    assert call_with_retries(Flaky(), "p", sleep=delays.append) == "ok"
    assert delays == [1.0]


def test_provider_failure_keeps_partial_status():
    corpus = build_corpus(FailingProvider(), 20, 5, sleep=lambda s: None)
    assert corpus.report.status == "provider_error"
    assert corpus.train == [] and corpus.val == []


def test_http_provider_needs_endpoint(monkeypatch):
    monkeypatch.delenv("THINKGRPO_PROVIDER_URL", raising=False)
    with pytest.raises(ConfigError):
        HttpProvider()


def test_http_provider_unreachable_raises_provider_error():
    provider = HttpProvider(url="http://127.0.0.1:9/none", timeout=0.5)
    with pytest.raises(ProviderError):
        provider.generate("hello")
