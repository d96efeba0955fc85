"""Pipeline configuration, loadable from a TOML file.

Example::

    global_timeout = 600
    function_budget = 120
    window = 8
    stables = ["0xdac17f958d2ee523a2206206994597c13d831ec7"]

    [budgets]
    syntax = 5
    semantic = 3
    aux_syntax = 3

    [provider]
    kind = "chat"
    endpoint = "https://api.example.com/v1/chat/completions"
    model = "some-model"
    key_env = "TXLIFT_API_KEY"

    [harness]
    kind = "forge"
    project = "/path/to/foundry/project"
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .align import DEFAULT_WINDOW
from .fundflow import E18, AssetPriority
from .hexutil import norm_address
from .refine import Budgets
from .rpc import EndpointConfig
from .selectors import SelectorDB

GLOBAL_TIMEOUT = 600.0
FUNCTION_BUDGET = 120.0


@dataclass
class ProviderConfig:
    kind: str = "mock"  # "mock" or "chat"
    endpoint: str = ""
    model: str = ""
    key_env: str = "TXLIFT_API_KEY"
    timeout: float = 120.0
    mock_dir: str | None = None
    params: dict = field(default_factory=dict)


@dataclass
class HarnessConfig:
    kind: str = "none"  # "none", "forge" or "stub"
    project: str | None = None
    forge: str = "forge"
    timeout: float = 600.0


@dataclass
class PipelineConfig:
    global_timeout: float = GLOBAL_TIMEOUT  # trace processing and sketch generation
    function_budget: float = FUNCTION_BUDGET  # lifting one in-scope function
    budgets: Budgets = field(default_factory=Budgets)
    window: int = DEFAULT_WINDOW
    stables: list[str] | None = None  # None uses the built-in list for the chain
    selector_db: str | None = None  # extra "name(types)" lines
    token_db: str | None = None  # "address name" lines
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    rpc: EndpointConfig | None = None
    cache_dir: str | None = None
    out_dir: str = "out"
    workers: int = 4
    minimal: bool = True
    compressed: bool = True
    direct: bool = False
    funding_floor: int = E18

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.function_budget <= 0 or self.global_timeout <= 0:
            raise ValueError("timeouts must be positive")
        if self.global_timeout < self.function_budget:
            raise ValueError("global_timeout must be at least function_budget")
        if min(self.budgets.syntax, self.budgets.semantic, self.budgets.aux_syntax) < 0:
            raise ValueError("budgets must be non-negative")
        if self.window < 0:
            raise ValueError("window must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.provider.kind not in ("mock", "chat"):
            raise ValueError(f"unknown provider kind {self.provider.kind!r}")
        if self.harness.kind not in ("none", "forge", "stub"):
            raise ValueError(f"unknown harness kind {self.harness.kind!r}")

    def with_(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)

    def priority(self, chain: str) -> AssetPriority:
        return AssetPriority.for_chain(chain, self.stables)

    def selectors(self) -> SelectorDB:
        db = SelectorDB.builtin()
        if self.selector_db:
            db.load_file(self.selector_db)
        return db

    def token_names(self) -> dict[str, str]:
        return load_token_names(self.token_db) if self.token_db else {}


def load_token_names(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            addr, name = line.split(None, 1)
            out[norm_address(addr)] = name.strip()
    return out


def _section(cls, data: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
    return cls(**data)


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    nested = {
        "budgets": (Budgets, "budgets"),
        "provider": (ProviderConfig, "provider"),
        "harness": (HarnessConfig, "harness"),
        "rpc": (EndpointConfig, "rpc"),
    }
    for key, (cls, name) in nested.items():
        if key in data:
            data[key] = _section(cls, data[key], name)
    return _section(PipelineConfig, data, "top level")


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, "rb") as f:
        return config_from_dict(tomllib.load(f))
