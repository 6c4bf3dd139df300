"""config.py

ChoiceConfig: the full assignment of every swept choice for one training run,
keyed by the choice names used throughout the study (``directrlalgorithm``,
``gailreward``, ``regularizer`` ...). Defaults are the best values found by the
main sweep.

Config files are flat ``key=value`` text::

    # DAC-like agent
    directrlalgorithm=td3
    regularizer=GP
    gpcoef=10
    explicitabsorbingstate=True
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ail_bench.errors import ConfigurationError

Algorithm = Literal["ppo", "sac", "td3", "d4pg"]
RewardKind = Literal["gail_pos", "airl", "ln_d", "fairl"]
RegularizerKind = Literal["none", "gp", "spectral", "mixup", "pugail", "dropout", "weight_decay", "entropy"]
DiscInputMode = Literal["s", "sa", "ss", "sas"]
ActivationName = Literal["relu", "tanh", "elu", "leaky_relu", "sigmoid", "swish"]
ObsNormalization = Literal["none", "fixed", "online"]
EvalPolicyType = Literal["stochastic", "mode", "average"]

INF = math.inf
STOCHASTIC_ALGORITHMS = ("ppo", "sac")

# Best values for every conditional sub-choice; used whenever the parent selects it.
SUBCHOICE_DEFAULTS: Dict[str, Any] = {
    "saclearningrate": 3e-4,
    "sactargetentropyperdimension": -0.5,
    "sactau": 0.01,
    "tdtpolicylearningrate": 3e-4,
    "tdtcriticlearningrate": 3e-4,
    "tdtgradientclipping": 40.0,
    "rlsigma": 0.2,
    "dfpglearningrate": 1e-4,
    "vmax": 150.0,
    "numatoms": 51,
    "nstep": 3,
    "ppolearningrate": 3e-4,
    "pponumepochs": 5,
    "ppoentropycost": 0.001,
    "pponumminibatches": 8,
    "ppounrolllength": 16,
    "ppoclippingepsilon": 0.2,
    "ppogaelambda": 0.95,
    "gpcoef": 1.0,
    "gptarget": 0.0,
    "mixupalpha": 1.0,
    "pugailpositiveclassprior": 0.7,
    "pugailbeta": INF,
    "dropoutinputrate": 0.5,
    "dropouthiddenrate": 0.75,
    "regweightdecay": 10.0,
    "regentropycoef": 0.03,
}

CONDITIONAL_CHOICES: Dict[str, Dict[str, Tuple[str, ...]]] = {
    "directrlalgorithm": {
        "sac": ("saclearningrate", "sactargetentropyperdimension", "sactau"),
        "td3": ("tdtpolicylearningrate", "tdtcriticlearningrate", "tdtgradientclipping", "rlsigma"),
        "d4pg": ("dfpglearningrate", "rlsigma", "vmax", "numatoms", "nstep"),
        "ppo": ("ppolearningrate", "pponumepochs", "ppoentropycost", "pponumminibatches",
                "ppounrolllength", "ppoclippingepsilon", "ppogaelambda"),
    },
    "regularizer": {
        "gp": ("gpcoef", "gptarget"),
        "mixup": ("mixupalpha",),
        "pugail": ("pugailpositiveclassprior", "pugailbeta"),
        "dropout": ("dropoutinputrate", "dropouthiddenrate"),
        "weight_decay": ("regweightdecay",),
        "entropy": ("regentropycoef",),
    },
}

# Spellings used in the sweep listings, lower-cased.
VALUE_ALIASES: Dict[str, Dict[str, str]] = {
    "gailreward": {"-ln(1-d)": "gail_pos", "airl": "airl", "ln(d)": "ln_d", "fairl": "fairl"},
    "regularizer": {
        "no regularizer": "none",
        "gp": "gp",
        "mixup": "mixup",
        "pugail": "pugail",
        "spectral norm": "spectral",
        "spectral normalization": "spectral",
        "weight decay": "weight_decay",
    },
}


def parse_scalar(text: str) -> Any:
    """Parses a config value: bool, inf, int, float, else the stripped string."""
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("inf", "+inf", "infinity", "∞"):
        return INF
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


class ChoiceConfig(BaseModel):
    """Every choice of one AIL training run.

    Sub-choices of ``directrlalgorithm`` and ``regularizer`` are present iff the
    parent value selects them; the before-validator drops the others and fills
    missing ones from ``SUBCHOICE_DEFAULTS``.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    # RL agent
    directrlalgorithm: Algorithm = "sac"
    numpolicylayers: int = Field(2, ge=0)
    policylayersize: int = Field(256, ge=1)
    numcriticlayers: int = Field(2, ge=0)
    criticlayersize: int = Field(256, ge=1)
    activation: ActivationName = "relu"
    discount: float = Field(0.97, gt=0.0, lt=1.0)
    batchsize: int = Field(256, ge=1)

    saclearningrate: Optional[float] = Field(None, gt=0.0)
    sactargetentropyperdimension: Optional[float] = None
    sactau: Optional[float] = Field(None, gt=0.0, le=1.0)

    tdtpolicylearningrate: Optional[float] = Field(None, gt=0.0)
    tdtcriticlearningrate: Optional[float] = Field(None, gt=0.0)
    tdtgradientclipping: Optional[float] = Field(None, gt=0.0)
    rlsigma: Optional[float] = Field(None, ge=0.0)

    dfpglearningrate: Optional[float] = Field(None, gt=0.0)
    vmax: Optional[float] = Field(None, gt=0.0)
    numatoms: Optional[int] = Field(None, ge=2)
    nstep: Optional[int] = Field(None, ge=1)

    ppolearningrate: Optional[float] = Field(None, gt=0.0)
    pponumepochs: Optional[int] = Field(None, ge=1)
    ppoentropycost: Optional[float] = Field(None, ge=0.0)
    pponumminibatches: Optional[int] = Field(None, ge=1)
    ppounrolllength: Optional[int] = Field(None, ge=1)
    ppoclippingepsilon: Optional[float] = Field(None, gt=0.0)
    ppogaelambda: Optional[float] = Field(None, ge=0.0, le=1.0)

    # replay and scheduling
    samplesperinsert: float = Field(256, gt=0.0)
    maxreplaysize: int = Field(3_000_000, ge=1)
    gailmaxreplaysize: int = Field(3_000_000, ge=1)
    discriminatortorlupdatesratio: int = Field(1, ge=1)
    gradupdatesperbatch: int = Field(8, ge=1)
    evalbehaviorpolicytype: EvalPolicyType = "mode"

    # imitation-specific RL changes
    gailreward: RewardKind = "airl"
    gailmaxrewardmagnitude: float = Field(INF, gt=0.0)
    explicitabsorbingstate: bool = True
    expertreplay: float = Field(INF, gt=0.0)
    pretrainwithbc: bool = True

    # discriminator
    gailinput: DiscInputMode = "sa"
    gailmlpnumlayers: int = Field(1, ge=0)
    gailmlpnumwidth: int = Field(64, ge=1)
    gailmlpactivation: ActivationName = "relu"
    gailmlplastlayerinitscale: float = Field(1.0, gt=0.0)
    gaildiscriminatormodule: bool = False
    subtractlogp: bool = False
    gaildiscriminatorlearningrate: float = Field(3e-5, gt=0.0)

    regularizer: RegularizerKind = "spectral"
    gpcoef: Optional[float] = Field(None, ge=0.0)
    gptarget: Optional[float] = None
    mixupalpha: Optional[float] = Field(None, gt=0.0)
    pugailpositiveclassprior: Optional[float] = Field(None, gt=0.0, lt=1.0)
    pugailbeta: Optional[float] = Field(None, ge=0.0)
    dropoutinputrate: Optional[float] = Field(None, ge=0.0, lt=1.0)
    dropouthiddenrate: Optional[float] = Field(None, ge=0.0, lt=1.0)
    regweightdecay: Optional[float] = Field(None, ge=0.0)
    regentropycoef: Optional[float] = Field(None, ge=0.0)

    obsnormalization: ObsNormalization = "fixed"

    # desk-scale knobs, not swept
    minreplaysize: int = Field(1000, ge=1)
    bcsteps: int = Field(10_000, ge=0)
    bclearningrate: float = Field(1e-4, gt=0.0)
    bcbatchsize: int = Field(256, ge=1)
    numevaluations: int = Field(10, ge=1)
    evalepisodes: int = Field(50, ge=1)
    ppovaluecost: float = Field(0.5, ge=0.0)
    ppoadvantagenormalization: bool = True
    spectralpoweriterations: int = Field(1, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _resolve_choices(cls, data: Any) -> Any:
        if not isinstance(data, Mapping):
            return data
        data = {k: parse_scalar(v) if isinstance(v, str) else v for k, v in data.items()}
        for key, aliases in VALUE_ALIASES.items():
            if isinstance(data.get(key), str):
                data[key] = aliases.get(data[key].lower(), data[key])
        for parent, by_value in CONDITIONAL_CHOICES.items():
            value = data.get(parent, cls.model_fields[parent].default)
            active = set(by_value.get(value, ()))
            for sub in {s for subs in by_value.values() for s in subs} - active:
                data.pop(sub, None)
            for sub in active:
                if data.get(sub) is None:
                    data[sub] = SUBCHOICE_DEFAULTS[sub]
        return data

    @model_validator(mode="after")
    def _check_choices(self) -> "ChoiceConfig":
        if self.subtractlogp and self.directrlalgorithm not in STOCHASTIC_ALGORITHMS:
            raise ValueError("subtractlogp requires a stochastic policy (ppo or sac)")
        if self.gptarget is not None and self.gptarget not in (0.0, 1.0):
            raise ValueError(f"gptarget must be 0 or 1, got {self.gptarget}")
        if self.pponumminibatches is not None and self.pponumminibatches > self.batchsize:
            raise ValueError(f"pponumminibatches={self.pponumminibatches} exceeds the {self.batchsize} fragments "
                             "of a rollout (batchsize)")
        return self

    @classmethod
    def from_flat(cls, values: Mapping[str, Any]) -> "ChoiceConfig":
        """Builds a config from a flat mapping, raising ConfigurationError on bad input."""
        try:
            return cls.model_validate(dict(values))
        except ValidationError as e:
            raise ConfigurationError(str(e)) from e

    def to_flat(self) -> Dict[str, Any]:
        """Returns the set choices as a flat dict (inactive sub-choices omitted)."""
        return self.model_dump(exclude_none=True)

    def with_updates(self, **updates: Any) -> "ChoiceConfig":
        """Returns a re-validated copy with some choices replaced."""
        flat = self.to_flat()
        flat.update(updates)
        return ChoiceConfig.from_flat(flat)

    @property
    def stochastic_policy(self) -> bool:
        return self.directrlalgorithm in STOCHASTIC_ALGORITHMS

    def rl_config(self) -> "RlConfig":
        """Extracts the RL learner's sub-record."""
        nets = NetworkSpec(
            policy_layers=(self.policylayersize,) * self.numpolicylayers,
            critic_layers=(self.criticlayersize,) * self.numcriticlayers,
            activation=self.activation,
        )
        algo = self.directrlalgorithm
        return RlConfig(
            algorithm=algo,
            discount=self.discount,
            batch_size=self.batchsize,
            networks=nets,
            sac=SacParams(self.saclearningrate, self.sactargetentropyperdimension, self.sactau)
            if algo == "sac" else None,
            td3=Td3Params(self.tdtpolicylearningrate, self.tdtcriticlearningrate,
                          self.tdtgradientclipping, self.rlsigma)
            if algo == "td3" else None,
            d4pg=D4pgParams(self.dfpglearningrate, self.rlsigma, self.vmax, self.numatoms, self.nstep)
            if algo == "d4pg" else None,
            ppo=PpoParams(self.ppolearningrate, self.pponumepochs, self.ppoentropycost,
                          self.pponumminibatches, self.ppounrolllength, self.ppoclippingepsilon,
                          self.ppogaelambda, self.ppovaluecost, self.ppoadvantagenormalization)
            if algo == "ppo" else None,
        )


@dataclass(frozen=True)
class NetworkSpec:
    """Hidden-layer sizes of the policy and critic MLPs."""
    policy_layers: Tuple[int, ...]
    critic_layers: Tuple[int, ...]
    activation: str = "relu"


@dataclass(frozen=True)
class SacParams:
    learning_rate: float
    target_entropy_per_dimension: float
    tau: float


@dataclass(frozen=True)
class Td3Params:
    policy_lr: float
    critic_lr: float
    gradient_clip: float
    sigma: float


@dataclass(frozen=True)
class D4pgParams:
    learning_rate: float
    sigma: float
    vmax: float
    num_atoms: int
    n_step: int


@dataclass(frozen=True)
class PpoParams:
    learning_rate: float
    num_epochs: int
    entropy_cost: float
    num_minibatches: int
    unroll_length: int
    clipping_epsilon: float
    gae_lambda: float
    value_cost: float = 0.5
    normalize_advantages: bool = True


@dataclass(frozen=True)
class RlConfig:
    """Learner-facing view of a ChoiceConfig: algorithm, shared knobs, one sub-record."""
    algorithm: str
    discount: float
    batch_size: int
    networks: NetworkSpec
    sac: Optional[SacParams] = None
    td3: Optional[Td3Params] = None
    d4pg: Optional[D4pgParams] = None
    ppo: Optional[PpoParams] = None


# Named starting points for --preset. "best" is the plain default.
PRESETS: Dict[str, Dict[str, Any]] = {
    "best": {},
    "dac": {
        "directrlalgorithm": "td3",
        "gailreward": "airl",
        "explicitabsorbingstate": True,
        "regularizer": "gp",
        "gpcoef": 10.0,
        "gptarget": 1.0,
        "pretrainwithbc": False,
    },
    "airl": {
        "directrlalgorithm": "ppo",
        "batchsize": 64,
        "gailreward": "airl",
        "gaildiscriminatormodule": True,
        "subtractlogp": True,
        "gailinput": "sas",
        "regularizer": "none",
        "explicitabsorbingstate": False,
        "pretrainwithbc": False,
    },
}


def load_config_file(path: str) -> Dict[str, Any]:
    """Reads a flat key=value config file.

    Args:
        path: Path to the file.

    Returns:
        Mapping of choice name to parsed value.

    Raises:
        ConfigurationError: On lines without ``=``.
    """
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = parse_scalar(value)
    return values


def save_config_file(config: ChoiceConfig, path: str) -> None:
    """Writes the config as sorted key=value lines."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v}" for k, v in sorted(config.to_flat().items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resolve_config(preset: Optional[str] = "best", path: Optional[str] = None,
                   overrides: Optional[Mapping[str, Any]] = None) -> ChoiceConfig:
    """Combines a preset, an optional config file and explicit overrides, field-wise.

    Args:
        preset: Name in ``PRESETS`` (None for plain defaults).
        path: Optional key=value file layered over the preset.
        overrides: Optional mapping layered last.

    Returns:
        The validated ChoiceConfig.
    """
    if preset is not None and preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; valid: {sorted(PRESETS)}")
    flat: Dict[str, Any] = dict(PRESETS.get(preset or "best", {}))
    if path:
        flat.update(load_config_file(path))
    if overrides:
        flat.update(overrides)
    return ChoiceConfig.from_flat(flat)


def choice_names() -> Tuple[str, ...]:
    """All valid choice names, in declaration order."""
    return tuple(ChoiceConfig.model_fields)
