import json
from pathlib import Path

import pytest

from citemate import __version__
from citemate.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from citemate.core.pipeline import EVALUATION_FILE, GRID_FILE


@pytest.fixture
def base_args(example_path: Path, embeddings_path: Path, tmp_path: Path) -> list[str]:
    return [
        "--dataset",
        str(example_path),
        "--out",
        str(tmp_path / "run"),
        "--embedding",
        f"file:{embeddings_path}",
        "--jobs",
        "1",
    ]


def test_validate(example_path, capsys) -> None:
    assert main(["validate", "--dataset", str(example_path)]) == EXIT_OK
    assert "ok: 1 cases" in capsys.readouterr().out


def test_validate_invalid_dataset(tmp_path, capsys) -> None:
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"split": "dev", "cases": [{"case_id": "x"}]}))
    assert main(["validate", "--dataset", str(path)]) == EXIT_INVALID
    assert "error:" in capsys.readouterr().err


def test_missing_dataset_file(tmp_path) -> None:
    assert main(["validate", "--dataset", str(tmp_path / "nope.json")]) != EXIT_OK


def test_unknown_strategy(base_args, capsys) -> None:
    assert main(["retrieve", *base_args, "--strategy", "magic"]) == EXIT_INVALID
    assert "Unsupported strategy" in capsys.readouterr().err


def test_generate_before_retrieve(base_args, capsys) -> None:
    assert main(["generate", *base_args]) == EXIT_RUNTIME
    assert "run the upstream stage first" in capsys.readouterr().err


def test_unreachable_embedding_endpoint(base_args) -> None:
    args = [a if not a.startswith("file:") else "http://127.0.0.1:9/embed" for a in base_args]
    assert main(["retrieve", *args, "--strategy", "fixed:2"]) == EXIT_RUNTIME


def test_surprise_records_fit_or_fallback(base_args, tmp_path) -> None:
    assert main(["retrieve", *base_args, "--strategy", "surprise"]) == EXIT_OK
    retrieval = json.loads((tmp_path / "run" / "retrieval.json").read_text())
    diagnostics = retrieval["runs"][0]["cases"][0]["truncation"]["diagnostics"]
    assert {"xi", "sigma"} <= set(diagnostics) or diagnostics["fallback"] == "elbow"


def test_fixed_k_bounds_kept_lists(base_args, tmp_path) -> None:
    assert main(["retrieve", *base_args, "--strategy", "fixed:10"]) == EXIT_OK
    retrieval = json.loads((tmp_path / "run" / "retrieval.json").read_text())
    assert all(len(c["truncation"]["kept_ids"]) <= 10 for c in retrieval["runs"][0]["cases"])


def test_stats(base_args, capsys) -> None:
    assert main(["stats", *base_args]) == EXIT_OK
    assert "appendix-a" in capsys.readouterr().out


def test_full_run(base_args, tmp_path, capsys) -> None:
    assert main(["retrieve", *base_args, "--strategy", "fixed:2"]) == EXIT_OK
    assert main(["generate", *base_args, "--strategy", "fixed:2"]) == EXIT_OK
    assert main(["attribute", *base_args, "--strategy", "fixed:2"]) == EXIT_OK
    assert main(["evaluate", *base_args, "--strategy", "fixed:2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "strict P 1.0000 R 1.0000 F1 1.0000" in out
    score = json.loads((tmp_path / "run" / EVALUATION_FILE).read_text())["score"]
    assert score["factuality"]["strict"]["f1"] == 1.0


def test_post_generation_grid_search(base_args, tmp_path, capsys) -> None:
    mode = ["--strategy", "fixed:2", "--attribution-mode", "post-generation"]
    assert main(["retrieve", *base_args, *mode]) == EXIT_OK
    assert main(["generate", *base_args, *mode]) == EXIT_OK
    assert main(["grid-search", *base_args, *mode, "--weight-step", "0.5"]) == EXIT_OK
    assert "54 configurations" in capsys.readouterr().out
    assert (tmp_path / "run" / GRID_FILE).exists()


def test_invalid_weights(base_args) -> None:
    with pytest.raises(SystemExit):
        main(["attribute", *base_args, "--weights", "0.5,0.5"])


def test_version(capsys) -> None:
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_dataset_is_required() -> None:
    with pytest.raises(SystemExit):
        main(["retrieve"])
