import time

import pytest

from softlid.config import (
    ExperimentConfig,
    ModelOptions,
    SuiteConfig,
    TrafficScenario,
    TrainOptions,
)
from softlid.evaluation import evaluate
from softlid.lin import train_lin
from softlid.transducer import TransducerModel, train_base

ACCEPTANCE_SEEDS = (1, 2, 3)


@pytest.fixture(scope="session")
def small_config():
    """A seconds-scale experiment used by the training-dependent tests."""
    return ExperimentConfig(
        suite=SuiteConfig(
            languages=("L1", "L2"),
            feature_dim=6,
            vocab_size=6,
            suite_seed=11,
            noise_sigma=0.2,
            frames_per_token_min=2,
            frames_per_token_max=2,
            tokens_min=2,
            tokens_max=4,
            train_per_language=24,
            test_per_language=8,
        ),
        model=ModelOptions(hidden_dim=12, embed_dim=8, chunk_size=3, max_symbols_per_frame=3),
        base_training=TrainOptions(peak_lr=4e-3, warmup_steps=40, epochs=6, batch_size=8, seed=1),
        lin_training=TrainOptions(peak_lr=1e-3, warmup_steps=20, epochs=3, batch_size=8, seed=1),
        lin_languages=("L2",),
        traffic=(TrafficScenario("p99-L2", "L2", 0.99),),
    )


@pytest.fixture(scope="session")
def small_data(small_config):
    return small_config.generate_data()


@pytest.fixture(scope="session")
def small_base(small_config, small_data):
    return train_base(small_config, small_data[0], seed=1)


def config_as_toml(cfg: ExperimentConfig) -> str:
    def fmt(value):
        if isinstance(value, bool):
            return str(value).lower()
        if isinstance(value, (int, float)):
            return repr(value)
        if isinstance(value, str):
            return f'"{value}"'
        if isinstance(value, (list, tuple)):
            return "[" + ", ".join(fmt(v) for v in value) + "]"
        raise TypeError(value)

    s, m, b, l = cfg.suite, cfg.model, cfg.base_training, cfg.lin_training
    lines = ["[suite]"]
    for key in (
        "languages", "feature_dim", "vocab_size", "suite_seed", "noise_sigma",
        "frames_per_token_min", "frames_per_token_max", "tokens_min", "tokens_max",
        "train_per_language", "test_per_language",
    ):
        lines.append(f"{key} = {fmt(getattr(s, key))}")
    lines.append("\n[model]")
    for key in ("hidden_dim", "embed_dim", "chunk_size", "max_symbols_per_frame"):
        lines.append(f"{key} = {fmt(getattr(m, key))}")
    for section, opts in (("base_training", b), ("lin_training", l)):
        lines.append(f"\n[{section}]")
        for key in ("peak_lr", "warmup_steps", "epochs", "batch_size", "seed"):
            lines.append(f"{key} = {fmt(getattr(opts, key))}")
        if section == "lin_training":
            lines.append(f"languages = {fmt(cfg.lin_languages)}")
    for scenario in cfg.traffic:
        lines.append("\n[[traffic]]")
        lines.append(f'name = "{scenario.name}"')
        lines.append(f'dominant = "{scenario.dominant}"')
        lines.append(f"share = {scenario.share!r}")
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def small_config_path(small_config, tmp_path_factory):
    path = tmp_path_factory.mktemp("config") / "small.toml"
    path.write_text(config_as_toml(small_config))
    return path


@pytest.fixture(scope="session")
def preset_run():
    """Full default-preset pipeline for seeds {1, 2, 3}, built once."""
    started = time.monotonic()
    cfg = ExperimentConfig.default()
    train, test = cfg.generate_data()
    traffics = cfg.traffic_distributions()
    runs = {}
    for seed in ACCEPTANCE_SEEDS:
        ckpt = train_base(cfg, train, seed=seed)
        model = TransducerModel.from_arrays(ckpt.model_config(), ckpt.tensors)
        base_report = evaluate(model, test, traffics=traffics, model_id=ckpt.param_hash)
        adapters = {}
        adapter_reports = {}
        for lang in cfg.lin_languages:
            lin = train_lin(ckpt, train.filter_language(lang), cfg, seed=seed)
            adapters[lang] = lin
            adapter_reports[lang] = evaluate(
                model, test, lin=lin, traffics=traffics, model_id=ckpt.param_hash
            )
        runs[seed] = {
            "checkpoint": ckpt,
            "model": model,
            "base_report": base_report,
            "adapters": adapters,
            "adapter_reports": adapter_reports,
        }
    return {
        "config": cfg,
        "train": train,
        "test": test,
        "traffics": traffics,
        "runs": runs,
        "elapsed": time.monotonic() - started,
    }
