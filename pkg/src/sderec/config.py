"""Run configuration: a flat `key = value` text format with dotted sections.

The same lines that parse into a TrainConfig are emitted verbatim into
checkpoint manifests, so a round trip is lossless by construction.
"""

from dataclasses import dataclass, field, replace

from .objectives import LossWeights
from .sgm import SdeSpec


@dataclass(frozen=True)
class CurriculumConfig:
    n_topk: int = 3
    m_random: int = 2
    rho: float = 0.8
    rho_hat: float = 0.8
    scope: str = "user"

    def __post_init__(self):
        if self.n_topk < 1 or self.m_random < 1:
            raise ValueError("curriculum needs n >= 1 and m >= 1")
        if not (0 < self.rho <= 1 and 0 < self.rho_hat <= 1):
            raise ValueError("rho and rho_hat must be in (0, 1]")


@dataclass(frozen=True)
class AblationFlags:
    no_curriculum: bool = False
    no_sgm: bool = False
    no_ssl: bool = False


@dataclass(frozen=True)
class NetConfig:
    time_embed_dim: int = 32
    hidden_dims: tuple = (64, 64)


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 64
    layers: int = 3
    epochs: int = 500
    batch_size: int = 1024
    learning_rate: float = 1e-3
    seed: int = 0
    eval_every: int = 1
    patience: int = 50
    t_start: float = 1.0
    t_eps: float = 1e-3
    bpr_use_denoised: bool = False
    aug_drop_rate: float = 0.1
    sde: SdeSpec = field(default_factory=SdeSpec)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    ablations: AblationFlags = field(default_factory=AblationFlags)
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if self.dim <= 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("need dim > 0, batch_size >= 1, learning_rate > 0")
        if self.layers < 0 or self.epochs < 1 or self.eval_every < 1:
            raise ValueError("need layers >= 0, epochs >= 1, eval_every >= 1")
        if not 0.0 < self.t_start <= 1.0:
            raise ValueError("t_start must be in (0, 1]")
        if not 0.0 <= self.aug_drop_rate < 1.0:
            raise ValueError("aug_drop_rate must be in [0, 1)")

    def to_lines(self):
        a, c, w, n, s = self.ablations, self.curriculum, self.weights, self.net, self.sde
        hidden = ",".join(str(h) for h in n.hidden_dims)
        return [
            f"dim = {self.dim}",
            f"layers = {self.layers}",
            f"epochs = {self.epochs}",
            f"batch_size = {self.batch_size}",
            f"learning_rate = {self.learning_rate!r}",
            f"seed = {self.seed}",
            f"eval_every = {self.eval_every}",
            f"patience = {self.patience}",
            f"t_start = {self.t_start!r}",
            f"t_eps = {self.t_eps!r}",
            f"bpr_use_denoised = {str(self.bpr_use_denoised).lower()}",
            f"aug_drop_rate = {self.aug_drop_rate!r}",
            f"sde.kind = {s.kind}",
            f"sde.beta_min = {s.beta_min!r}",
            f"sde.beta_max = {s.beta_max!r}",
            f"sde.sigma_min = {s.sigma_min!r}",
            f"sde.sigma_max = {s.sigma_max!r}",
            f"sde.m_steps = {s.m_steps}",
            f"sde.n_corrector = {s.n_corrector}",
            f"sde.snr = {s.snr!r}",
            f"curriculum.n = {c.n_topk}",
            f"curriculum.m = {c.m_random}",
            f"curriculum.rho = {c.rho!r}",
            f"curriculum.rho_hat = {c.rho_hat!r}",
            f"curriculum.scope = {c.scope}",
            f"loss.lambda1 = {w.lambda1!r}",
            f"loss.lambda2 = {w.lambda2!r}",
            f"loss.tau = {w.tau!r}",
            f"ablation.no_curriculum = {str(a.no_curriculum).lower()}",
            f"ablation.no_sgm = {str(a.no_sgm).lower()}",
            f"ablation.no_ssl = {str(a.no_ssl).lower()}",
            f"net.time_embed_dim = {n.time_embed_dim}",
            f"net.hidden = {hidden}",
        ]


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config_lines(lines) -> TrainConfig:
    entries = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected key = value")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return config_from_entries(entries)


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_lines(fh)


_TOP = {
    "dim": int,
    "layers": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "seed": int,
    "eval_every": int,
    "patience": int,
    "t_start": float,
    "t_eps": float,
    "bpr_use_denoised": _parse_bool,
    "aug_drop_rate": float,
}
_SDE = {
    "kind": str,
    "beta_min": float,
    "beta_max": float,
    "sigma_min": float,
    "sigma_max": float,
    "m_steps": int,
    "n_corrector": int,
    "snr": float,
}
_CURRICULUM = {"n": int, "m": int, "rho": float, "rho_hat": float, "scope": str}
_LOSS = {"lambda1": float, "lambda2": float, "tau": float}
_ABLATION = {
    "no_curriculum": _parse_bool,
    "no_sgm": _parse_bool,
    "no_ssl": _parse_bool,
}
_NET = {"time_embed_dim": int, "hidden": str}


def config_from_entries(entries: dict) -> TrainConfig:
    cfg = TrainConfig()
    top, sde, cur, loss, abl, net = {}, {}, {}, {}, {}, {}
    for key, value in entries.items():
        if "." in key:
            section, _, name = key.partition(".")
            table = {
                "sde": (_SDE, sde),
                "curriculum": (_CURRICULUM, cur),
                "loss": (_LOSS, loss),
                "ablation": (_ABLATION, abl),
                "net": (_NET, net),
            }.get(section)
            if table is None or name not in table[0]:
                raise ValueError(f"unknown config key: {key!r}")
            table[1][name] = table[0][name](value)
        else:
            if key not in _TOP:
                raise ValueError(f"unknown config key: {key!r}")
            top[key] = _TOP[key](value)
    if sde:
        base = cfg.sde
        cfg = replace(
            cfg,
            sde=SdeSpec(
                kind=sde.get("kind", base.kind),
                beta_min=sde.get("beta_min", base.beta_min),
                beta_max=sde.get("beta_max", base.beta_max),
                sigma_min=sde.get("sigma_min", base.sigma_min),
                sigma_max=sde.get("sigma_max", base.sigma_max),
                m_steps=sde.get("m_steps", base.m_steps),
                n_corrector=sde.get("n_corrector", base.n_corrector),
                snr=sde.get("snr", base.snr),
            ),
        )
    if cur:
        base = cfg.curriculum
        cfg = replace(
            cfg,
            curriculum=CurriculumConfig(
                n_topk=cur.get("n", base.n_topk),
                m_random=cur.get("m", base.m_random),
                rho=cur.get("rho", base.rho),
                rho_hat=cur.get("rho_hat", base.rho_hat),
                scope=cur.get("scope", base.scope),
            ),
        )
    if loss:
        base = cfg.weights
        cfg = replace(
            cfg,
            weights=LossWeights(
                lambda1=loss.get("lambda1", base.lambda1),
                lambda2=loss.get("lambda2", base.lambda2),
                tau=loss.get("tau", base.tau),
            ),
        )
    if abl:
        base = cfg.ablations
        cfg = replace(
            cfg,
            ablations=AblationFlags(
                no_curriculum=abl.get("no_curriculum", base.no_curriculum),
                no_sgm=abl.get("no_sgm", base.no_sgm),
                no_ssl=abl.get("no_ssl", base.no_ssl),
            ),
        )
    if net:
        base = cfg.net
        hidden = base.hidden_dims
        if "hidden" in net:
            hidden = tuple(int(h) for h in net["hidden"].split(",") if h.strip())
        cfg = replace(
            cfg,
            net=NetConfig(
                time_embed_dim=net.get("time_embed_dim", base.time_embed_dim),
                hidden_dims=hidden,
            ),
        )
    if top:
        cfg = replace(cfg, **top)
    return cfg
