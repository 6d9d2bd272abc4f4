import dataclasses
import json

import pytest

from jsonl_util import write_jsonl
from naicl.context import PromptVariant
from naicl.errors import UsageError
from naicl.pipeline import (
    PipelineError,
    RunConfig,
    default_matrix,
    load_matrix,
    make_backend,
    run_matrix,
    run_pipeline,
)


def base_config(bench_dir, mini_library_dir, out_dir, **overrides) -> RunConfig:
    cfg = RunConfig(
        manifest=str(bench_dir / "manifest.jsonl"),
        variant=PromptVariant.NAICL_RETRIEVAL,
        shots=3,
        library_dir=str(mini_library_dir),
        generator=f"mock:{bench_dir / 'gen.jsonl'}",
        judge_backend=f"mock:{bench_dir / 'judge.jsonl'}",
        out_dir=str(out_dir),
    )
    return dataclasses.replace(cfg, **overrides)


class TestRunPipeline:
    def test_artifacts_and_scores(self, bench_dir, mini_library_dir, tmp_path):
        cfg = base_config(bench_dir, mini_library_dir, tmp_path / "run")
        result = run_pipeline(cfg)
        assert result.exit_code == 0
        report = result.report
        assert report.hr_percent == 30.0
        assert report.n_samples == report.n_judged == 10
        assert report.type_rates_percent["fabricated_event"] == 30.0
        assert report.keyword_freq["event"] == 0.3
        out = result.out_dir
        assert (out / "captions.jsonl").exists()
        assert (out / "verdicts.jsonl").exists()
        assert (out / "report.json").exists()
        assert (out / "report.md").exists()
        captions = [json.loads(l) for l in (out / "captions.jsonl").read_text().splitlines()]
        assert [c["sample_id"] for c in captions] == [f"clip{i:02d}" for i in range(10)]

    def test_baseline_variant_needs_no_library(self, bench_dir, tmp_path):
        cfg = RunConfig(
            manifest=str(bench_dir / "manifest.jsonl"),
            variant=PromptVariant.BASELINE_NONE,
            shots=0,
            generator=f"mock:{bench_dir / 'gen.jsonl'}",
            judge_backend=f"mock:{bench_dir / 'judge.jsonl'}",
            out_dir=str(tmp_path / "run"),
        )
        assert run_pipeline(cfg).report.hr_percent == 30.0

    def test_icl_real_reserves_holdout(self, bench_dir, tmp_path):
        cfg = RunConfig(
            manifest=str(bench_dir / "manifest.jsonl"),
            variant=PromptVariant.ICL_REAL_AUDIO,
            shots=3,
            generator=f"mock:{bench_dir / 'gen.jsonl'}",
            judge_backend=f"mock:{bench_dir / 'judge.jsonl'}",
            out_dir=str(tmp_path / "run"),
        )
        report = run_pipeline(cfg).report
        # clip00..02 become exemplars; 2 of the remaining 7 are hallucinated
        assert report.n_samples == 7
        assert report.hr_percent == 28.57

    def test_max_samples(self, bench_dir, mini_library_dir, tmp_path):
        cfg = base_config(bench_dir, mini_library_dir, tmp_path / "run", max_samples=4)
        report = run_pipeline(cfg).report
        assert report.n_samples == 4
        assert report.hr_percent == 25.0  # clip02 is the only scripted hit in 4

    def test_embedder_tag_mismatch(self, bench_dir, mini_library_dir, tmp_path):
        cfg = base_config(
            bench_dir, mini_library_dir, tmp_path / "run",
            embedder="external:http://127.0.0.1:9",
        )
        with pytest.raises(PipelineError, match="re-embed"):
            run_pipeline(cfg)

    def test_duration_mismatch(self, bench_dir, mini_library_dir, tmp_path):
        cfg = base_config(
            bench_dir, mini_library_dir, tmp_path / "run", noise_duration_s=10.0
        )
        with pytest.raises(PipelineError, match="noise_duration_s"):
            run_pipeline(cfg)

    def test_partial_run_exit_code(self, bench_dir, mini_library_dir, tmp_path):
        # drop one scripted caption: that sample fails generation, run is partial
        rows = [json.loads(l) for l in (bench_dir / "gen.jsonl").read_text().splitlines()]
        gen = tmp_path / "gen_partial.jsonl"
        write_jsonl(gen, [r for r in rows if r["sample_id"] != "clip04"])
        cfg = base_config(
            bench_dir, mini_library_dir, tmp_path / "run", generator=f"mock:{gen}"
        )
        result = run_pipeline(cfg)
        assert result.exit_code == 3
        assert result.report.generation_failures == 1
        assert result.report.n_judged == 9
        assert (result.out_dir / "failures.jsonl").exists()

    def test_unjudgeable_excluded_from_rate(self, bench_dir, mini_library_dir, tmp_path):
        # clip00's judge reply is unparseable on both attempts
        rows = [json.loads(l) for l in (bench_dir / "judge.jsonl").read_text().splitlines()]
        for row in rows:
            if row["sample_id"] == "clip00":
                row["caption"] = "no json here"
        judge = tmp_path / "judge_bad.jsonl"
        write_jsonl(judge, rows)
        cfg = base_config(
            bench_dir, mini_library_dir, tmp_path / "run", judge_backend=f"mock:{judge}"
        )
        result = run_pipeline(cfg)
        assert result.exit_code == 3
        report = result.report
        assert report.unjudgeable == 1
        assert report.n_judged == 9
        assert report.hr_percent == 33.33  # 3 of 9 judged
        rows = [json.loads(l) for l in (result.out_dir / "verdicts.jsonl").read_text().splitlines()]
        assert rows[0]["unjudgeable"] is True and "reason" in rows[0]

    def test_resume_skips_completed_work(self, bench_dir, mini_library_dir, tmp_path):
        out = tmp_path / "run"
        cfg = base_config(bench_dir, mini_library_dir, out)
        first = run_pipeline(cfg)
        report_bytes = (out / "report.json").read_bytes()

        # backends that fail on any call: resume must not need them
        dead = tmp_path / "dead.jsonl"
        dead.write_text("")
        resumed_cfg = dataclasses.replace(
            cfg, generator=f"mock:{dead}", judge_backend=f"mock:{dead}", resume=True
        )
        resumed = run_pipeline(resumed_cfg)
        assert resumed.exit_code == 0
        assert (out / "captions.jsonl").read_text() == "\n".join(
            json.dumps(json.loads(l), sort_keys=True)
            for l in (out / "captions.jsonl").read_text().splitlines()
        ) + "\n"
        assert resumed.report.hr_percent == first.report.hr_percent

    def test_resume_fills_only_missing(self, bench_dir, mini_library_dir, tmp_path):
        out = tmp_path / "run"
        cfg = base_config(bench_dir, mini_library_dir, out)
        run_pipeline(cfg)
        # drop two persisted captions; resume should regenerate exactly those
        captions = [json.loads(l) for l in (out / "captions.jsonl").read_text().splitlines()]
        kept = [c for c in captions if c["sample_id"] not in ("clip03", "clip08")]
        write_jsonl(out / "captions.jsonl", kept)
        verdicts = [json.loads(l) for l in (out / "verdicts.jsonl").read_text().splitlines()]
        write_jsonl(out / "verdicts.jsonl",
                    [v for v in verdicts if v["sample_id"] not in ("clip03", "clip08")])

        resumed = run_pipeline(dataclasses.replace(cfg, resume=True))
        assert resumed.report.hr_percent == 30.0
        rows = [json.loads(l) for l in (out / "captions.jsonl").read_text().splitlines()]
        assert [r["sample_id"] for r in rows] == [f"clip{i:02d}" for i in range(10)]


class TestSnapshot:
    def test_execution_knobs_excluded(self, bench_dir, mini_library_dir, tmp_path):
        a = base_config(bench_dir, mini_library_dir, tmp_path / "a", concurrency=1)
        b = base_config(bench_dir, mini_library_dir, tmp_path / "b", concurrency=8,
                        resume=True)
        assert a.run_id() == b.run_id()
        assert "out_dir" not in a.snapshot()
        assert "concurrency" not in a.snapshot()

    def test_experiment_knobs_included(self, bench_dir, mini_library_dir, tmp_path):
        a = base_config(bench_dir, mini_library_dir, tmp_path / "a")
        for override in (
            {"shots": 1},
            {"structured": False},
            {"noise_duration_s": 10.0},
            {"variant": PromptVariant.NAICL_FIXED},
            {"stem": True},
        ):
            b = dataclasses.replace(a, **override)
            assert a.run_id() != b.run_id(), override


class TestBackendSpecs:
    def test_mock_default(self):
        backend = make_backend("mock", "generator")
        assert backend.name == "mock"

    def test_mock_judge_default_parses(self):
        from naicl.judge import parse_verdict

        backend = make_backend("mock", "judge")
        raw = backend.complete(type("R", (), {"sample_id": "x"})())
        assert parse_verdict(raw, "anything").hallucinated is False

    def test_http_spec(self):
        backend = make_backend("http://host:8000/v1", "generator")
        assert backend.name.startswith("http:")

    def test_unknown_spec(self):
        with pytest.raises(UsageError):
            make_backend("grpc:host", "generator")


class TestMatrix:
    def test_default_matrix_runs_all_rows(
        self, bench_dir, mini_library_dir, library_10s_dir, tmp_path
    ):
        base = base_config(bench_dir, mini_library_dir, tmp_path / "ablate")
        rows = default_matrix(str(mini_library_dir), str(library_10s_dir))
        assert len(rows) == 8
        results, out = run_matrix(base, rows, tmp_path / "ablate")
        assert len(results) == 8
        payload = json.loads((out / "report.json").read_text())
        assert len(payload["runs"]) == 8
        snapshots = [json.dumps(r["config_snapshot"], sort_keys=True)
                     for r in payload["runs"]]
        assert len(set(snapshots)) == 8

    def test_identical_rows_rejected(self, bench_dir, mini_library_dir, tmp_path):
        base = base_config(bench_dir, mini_library_dir, tmp_path / "ablate")
        rows = [
            default_matrix(str(mini_library_dir), str(mini_library_dir))[0],
            dataclasses.replace(
                default_matrix(str(mini_library_dir), str(mini_library_dir))[0],
                label="copy",
            ),
        ]
        with pytest.raises(UsageError, match="identical"):
            run_matrix(base, rows, tmp_path / "ablate")

    def test_load_matrix_validation(self, tmp_path):
        path = tmp_path / "matrix.json"
        path.write_text(json.dumps([{"label": "a", "variant": "baseline_none", "shots": 0},
                                    {"label": "a", "shots": 1}]))
        with pytest.raises(UsageError, match="duplicate"):
            load_matrix(path)
        path.write_text(json.dumps({"not": "a list"}))
        with pytest.raises(UsageError, match="list"):
            load_matrix(path)

    def test_load_matrix_parses_variants(self, tmp_path):
        path = tmp_path / "matrix.json"
        path.write_text(json.dumps([
            {"label": "a", "variant": "naicl_fixed", "shots": 2},
        ]))
        rows = load_matrix(path)
        assert rows[0].overrides["variant"] == PromptVariant.NAICL_FIXED
