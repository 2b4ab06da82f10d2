"""Flat ``key = value`` run configuration covering training, haze, architecture and paths."""

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .hazesynth import HazeParams
from .losses import LossWeights
from .matting import DEFAULT_EPS, DEFAULT_RADIUS
from .networks import ArchConfig
from .trainer import ConfigError, TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # optimization
    lr: float = 2e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs_constant: int = 50
    epochs_decay: int = 50
    seed: int = 0
    batch_size: int = 1
    photorealism_mode: str = "both"
    paired_backward: bool = True
    checkpoint_every: int = 0
    max_iterations: int = 0
    matting_eps: float = DEFAULT_EPS
    matting_radius: int = DEFAULT_RADIUS
    # loss weights
    lambda1: float = 10.0
    lambda2: float = 2.0
    lambda3: float = 9.9
    lambda4: float = 0.1
    # haze synthesis
    haze_A: float = 0.85
    haze_beta: float = 1.0
    haze_beta_jitter: float = 0.3
    haze_refine: bool = True
    haze_refine_lambda: float = 1e-4
    # architecture
    base_channels: int = 16
    num_residual_blocks: int = 2
    image_size: int = 32
    # paths ("" means unset)
    data_dir: str = ""
    out_dir: str = ""
    cache_dir: str = ""

    def __post_init__(self):
        # building the typed sub-configs runs their validation
        try:
            self.train_config()
            self.haze_params()
            self.arch_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def weights(self):
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4)

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)} - {"weights"}
        return TrainConfig(weights=self.weights(), **{n: getattr(self, n) for n in names})

    def haze_params(self):
        return HazeParams(self.haze_A, self.haze_beta, self.haze_beta_jitter, self.haze_refine, self.haze_refine_lambda)

    def arch_config(self):
        return ArchConfig(self.base_channels, self.num_residual_blocks, self.image_size)

    def with_overrides(self, **kw):
        return replace(self, **kw)


FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key, raw):
    kind = FIELDS[key].type
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "bool": bool, "str": str}[kind]
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_text(text, base=None, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return replace(base or RunConfig(), **values)


def load(path, base=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_text(text, base, str(path))


def dump(config):
    return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(config).items())


def add_arguments(parser):
    """Add one ``--key`` flag per config field (dashes for underscores), default unset."""
    group = parser.add_argument_group("config overrides")
    for name in FIELDS:
        if name in ("seed", "out_dir"):
            continue  # exposed as the common --seed / --out flags
        group.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}", default=None, metavar="VALUE")


def from_args(args):
    """Defaults, then ``--config`` file, then individual flag overrides."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load(args.config, cfg)
    overrides = {}
    for name in FIELDS:
        raw = getattr(args, f"cfg_{name}", None)
        if raw is not None:
            overrides[name] = _convert(name, raw)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = int(args.seed)
    if getattr(args, "out", None):
        overrides["out_dir"] = str(args.out)
    return replace(cfg, **overrides)


__all__ = ["RunConfig", "ConfigError", "parse_text", "load", "dump", "add_arguments", "from_args"]
