"""Run configuration: INI-style ``key = value`` sections, validated before any compute.

Example::

    [data]
    train_images = data/mnist5k-train-images-idx3-ubyte.gz
    train_labels = data/mnist5k-train-labels-idx1-ubyte.gz
    test_images = data/mnist5k-test-images-idx3-ubyte.gz
    test_labels = data/mnist5k-test-labels-idx1-ubyte.gz

    [train]
    trainer = mwu
    T = 20
    r = 3
    h = 3

    [arm pixel-linf]
    space = pixel
    norm = Linf
    epsilon = 0.4

Without any ``[arm ...]`` section the six default MNIST arms are used.
"""

import configparser
import json
import os
from dataclasses import dataclass, field

from multirep.attacks import AttackSpec, Norm
from multirep.model import DEFAULT_ARCHITECTURE
from multirep.repspace import make_space
from multirep.trainers import LossArm, MwuConfig

TRAINERS = ("mwu", "greedy", "round_robin", "single")

MNIST_EPSILON = {Norm.LINF: 0.4, Norm.L2: 1.0, Norm.L1: 5.0}
CIFAR_EPSILON = {Norm.LINF: 0.06, Norm.L2: 0.1, Norm.L1: 7.84}
TRAIN_STEPS = {Norm.LINF: 10, Norm.L2: 10, Norm.L1: 20}
EVAL_STEPS = {Norm.LINF: 40, Norm.L2: 40, Norm.L1: 100}
SLIDE_SPARSITY = 0.05


class ConfigError(ValueError):
    pass


def make_arm(name, space, norm, epsilon, train_steps=None, eval_steps=None,
             sparsity=SLIDE_SPARSITY, restarts=1, shape=(28, 28, 1), seed=0):
    norm = Norm.parse(norm)
    train_steps = TRAIN_STEPS[norm] if train_steps is None else int(train_steps)
    eval_steps = EVAL_STEPS[norm] if eval_steps is None else int(eval_steps)
    common = dict(norm=norm, epsilon=float(epsilon), sparsity_fraction=float(sparsity), seed=seed)
    return LossArm(
        name=name,
        space=make_space(space, shape),
        attack=AttackSpec(steps=train_steps, **common),
        eval_attack=AttackSpec(steps=eval_steps, restarts=int(restarts), **common),
    )


def default_arms(epsilons, shape=(28, 28, 1)):
    arms = []
    for space in ("pixel", "dct"):
        for norm in (Norm.LINF, Norm.L2, Norm.L1):
            arms.append(make_arm(f"{space}-{norm.value.lower()}", space, norm, epsilons[norm],
                                 shape=shape))
    for i, arm in enumerate(arms):
        arm.index = i
    return arms


def default_arms_mnist():
    """Pixel and DCT spaces x {l_inf 0.4, l_2 1, l_1 5}; 10/20 training and 40/100 evaluation steps."""
    return default_arms(MNIST_EPSILON, (28, 28, 1))


def default_arms_cifar():
    return default_arms(CIFAR_EPSILON, (32, 32, 3))


_SCHEMA = {
    "data": {
        "train_images": str, "train_labels": str, "test_images": str, "test_labels": str,
        "subset": int, "test_subset": int, "split_seed": int,
    },
    "train": {
        "trainer": str, "eta": float, "T": int, "r": int, "h": int, "batch_size": int,
        "learning_rate": float, "seeds": "ints", "val_strength": str, "arm": str,
        "pretrain_epochs": int,
    },
    "model": {"architecture": str, "input_shape": "ints"},
    "eval": {"seeds": "ints", "restarts": int, "test_limit": int},
    "output": {"dir": str},
}
_ARM_KEYS = {"space": str, "norm": str, "epsilon": float, "train_steps": int,
             "eval_steps": int, "sparsity": float, "restarts": int}


def _convert(section, key, raw, kind):
    try:
        if kind == "ints":
            return [int(v) for v in raw.replace(",", " ").split()]
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


@dataclass
class RunConfig:
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None
    subset: int = None
    test_subset: int = None
    split_seed: int = 0
    trainer: str = "mwu"
    single_arm: str = None
    mwu: MwuConfig = field(default_factory=MwuConfig)
    seeds: list = field(default_factory=lambda: [0])
    pretrain_epochs: int = 0
    architecture: tuple = DEFAULT_ARCHITECTURE
    input_shape: tuple = (28, 28, 1)
    arms: list = None
    eval_seeds: list = field(default_factory=lambda: [0])
    eval_restarts: int = None
    test_limit: int = None
    out_dir: str = "runs"

    def __post_init__(self):
        if self.arms is None:
            self.arms = default_arms(MNIST_EPSILON, self.input_shape)
        self.validate()

    def validate(self):
        if self.trainer not in TRAINERS:
            raise ConfigError(f"trainer: unknown trainer {self.trainer!r} (expected one of {TRAINERS})")
        if not self.arms:
            raise ConfigError("arms: at least one arm is required")
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ConfigError(f"arms: duplicate arm names {names}")
        if self.single_arm is not None and self.single_arm not in names:
            raise ConfigError(f"arm: {self.single_arm!r} is not a configured arm")
        if self.pretrain_epochs < 0:
            raise ConfigError(f"pretrain_epochs: must be >= 0, got {self.pretrain_epochs}")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")

    def training_arms(self):
        if self.trainer == "single":
            name = self.single_arm or self.arms[0].name
            return [a for a in self.arms if a.name == name]
        return self.arms


def parse_config(text):
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str  # keep case ("T")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    values, arm_sections = {}, []
    for section in parser.sections():
        if section.startswith("arm "):
            arm_sections.append(section)
            continue
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"[{section}] {key}: unknown key")
            values[(section, key)] = _convert(section, key, raw, _SCHEMA[section][key])

    get = values.get
    input_shape = tuple(get(("model", "input_shape"), (28, 28, 1)))
    arch = get(("model", "architecture"), "default")
    if arch == "default":
        architecture = DEFAULT_ARCHITECTURE
    else:
        try:
            architecture = tuple(json.loads(arch))
        except json.JSONDecodeError:
            raise ConfigError(f"[model] architecture: not 'default' or a JSON layer list") from None

    arms = []
    for section in arm_sections:
        name = section[4:].strip()
        spec = {}
        for key, raw in parser.items(section):
            if key not in _ARM_KEYS:
                raise ConfigError(f"[{section}] {key}: unknown key")
            spec[key] = _convert(section, key, raw, _ARM_KEYS[key])
        for required in ("space", "norm", "epsilon"):
            if required not in spec:
                raise ConfigError(f"[{section}] {required}: missing")
        try:
            arms.append(make_arm(name, shape=input_shape, **spec))
        except ValueError as exc:
            raise ConfigError(f"[{section}]: {exc}") from None

    try:
        mwu = MwuConfig(
            eta=get(("train", "eta"), MwuConfig.eta),
            T=get(("train", "T"), MwuConfig.T),
            r=get(("train", "r"), MwuConfig.r),
            h=get(("train", "h"), MwuConfig.h),
            batch_size=get(("train", "batch_size"), MwuConfig.batch_size),
            learning_rate=get(("train", "learning_rate"), MwuConfig.learning_rate),
            val_strength=get(("train", "val_strength"), MwuConfig.val_strength),
        )
    except ValueError as exc:
        raise ConfigError(f"[train]: {exc}") from None

    return RunConfig(
        train_images=get(("data", "train_images")),
        train_labels=get(("data", "train_labels")),
        test_images=get(("data", "test_images")),
        test_labels=get(("data", "test_labels")),
        subset=get(("data", "subset")),
        test_subset=get(("data", "test_subset")),
        split_seed=get(("data", "split_seed"), 0),
        trainer=get(("train", "trainer"), "mwu"),
        single_arm=get(("train", "arm")),
        mwu=mwu,
        seeds=get(("train", "seeds"), [0]),
        pretrain_epochs=get(("train", "pretrain_epochs"), 0),
        architecture=architecture,
        input_shape=input_shape,
        arms=arms or None,
        eval_seeds=get(("eval", "seeds"), [0]),
        eval_restarts=get(("eval", "restarts")),
        test_limit=get(("eval", "test_limit")),
        out_dir=get(("output", "dir"), "runs"),
    )


def load_config(path):
    """Parse a config file; relative data paths resolve against the file's directory."""
    with open(path) as fh:
        cfg = parse_config(fh.read())
    base = os.path.dirname(os.path.abspath(path))
    for attr in ("train_images", "train_labels", "test_images", "test_labels"):
        value = getattr(cfg, attr)
        if value and not os.path.isabs(value):
            setattr(cfg, attr, os.path.normpath(os.path.join(base, value)))
    return cfg
