import hashlib
from importlib import resources

import pytest

from intentcache.cli import main
from intentcache.config import RunConfig, format_config, load_config, parse_config
from intentcache.errors import ConfigurationError
from intentcache.metrics import strip_timing, validate_report


def test_config_defaults_and_passthrough(tmp_path):
    cfg = parse_config("")
    assert cfg.pipeline.theta == 0.9 and cfg.pipeline.theta_cache == 0.9
    assert parse_config("clustering.alpha = 5.0\n").clustering.alpha == 5.0
    cfg = parse_config("# comment\nmodel.standard_gru = yes\ntraining.negatives = 4  # trailing\nclustering.h = none\n")
    assert cfg.model.standard_gru is True and cfg.training.negatives == 4 and cfg.clustering.h is None
    (tmp_path / "empty.cfg").write_text("")
    assert load_config(tmp_path / "empty.cfg") == RunConfig()
    assert parse_config(format_config(RunConfig())) == RunConfig()


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("unknown.key = 1\n", "unknown key 'unknown.key'"),
        ("pipeline.thetaa = 1\n", "unknown key 'pipeline.thetaa'"),
        ("pipeline.theta = high\n", "pipeline.theta"),
        ("pipeline.theta = 1.5\n", "pipeline.theta"),
        ("clustering.beta\n", "line 1"),
    ],
)
def test_config_errors(text, fragment):
    with pytest.raises(ConfigurationError, match=fragment.replace(".", r"\.")):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.cfg")


@pytest.fixture(scope="module")
def corpus_copy(tmp_path_factory):
    """Sample corpus copied out of the package, with the config pointing at it."""
    root = tmp_path_factory.mktemp("cli")
    src = resources.files("intentcache").joinpath("data", "cisi_sample")
    for name in ("CISI.ALL", "CISI.QRY", "CISI.REL"):
        (root / name).write_bytes(src.joinpath(name).read_bytes())
    cfg = root / "run.cfg"
    cfg.write_text(
        f"paths.documents = {root / 'CISI.ALL'}\npaths.queries = {root / 'CISI.QRY'}\n"
        f"paths.relevance = {root / 'CISI.REL'}\nrun.seed = 3\n"
    )
    return root, cfg


def _digest(root):
    return {n: hashlib.sha256((root / n).read_bytes()).hexdigest() for n in ("CISI.ALL", "CISI.QRY", "CISI.REL")}


def test_cli_stages_end_to_end(corpus_copy, capsys):
    root, cfg = corpus_copy
    before = _digest(root)
    work = root / "work"
    common = ["--config", str(cfg), "--workdir", str(work)]

    assert main(["ingest", *common]) == 0
    out = capsys.readouterr().out
    assert "documents: 40" in out and (work / "split.txt").is_file()

    assert main(["cluster", *common]) == 0
    assert "silhouette:" in capsys.readouterr().out and (work / "structured.tsv").is_file()

    assert main(["train", *common]) == 0
    assert "ner_f1_percent: 100.000" in capsys.readouterr().out

    assert main(["query", *common, "what is indexing"]) == 0
    first = capsys.readouterr().out
    assert "intent: I" in first and "source: pipeline" in first
    assert main(["query", *common, "what is indexing"]) == 0
    assert "source: cache" in capsys.readouterr().out

    reports = []
    for i in range(2):
        report = root / f"report{i}.txt"
        assert main(["bench", *common, "--report", str(report)]) == 0
        capsys.readouterr()
        text = report.read_text()
        values = validate_report(text)
        assert values["chr_percent"] >= 50.0
        reports.append(text)
    assert strip_timing(reports[0]) == strip_timing(reports[1])

    assert main(["eval", *common]) == 0
    assert strip_timing(capsys.readouterr().out) == strip_timing(reports[1])
    assert _digest(root) == before


def test_cli_eval_on_empty_log(tmp_path, capsys):
    log = tmp_path / "empty.json"
    log.write_text('{"queries": []}')
    assert main(["eval", "--workdir", str(tmp_path), "--log", str(log)]) == 1
    err = capsys.readouterr().err
    assert "intentcache eval: error:" in err and "zero lookups" in err


def test_cli_reports_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("unknown.key = 1\n")
    assert main(["ingest", "--config", str(cfg), "--workdir", str(tmp_path)]) == 1
    assert "unknown key 'unknown.key'" in capsys.readouterr().err
    assert main(["ingest", "--threshold", "2", "--workdir", str(tmp_path)]) == 1


def test_cli_eval_without_log(tmp_path, capsys):
    assert main(["eval", "--workdir", str(tmp_path / "nowhere")]) == 1
    assert "run bench first" in capsys.readouterr().err


def test_cli_requires_a_subcommand():
    with pytest.raises(SystemExit):
        main([])

