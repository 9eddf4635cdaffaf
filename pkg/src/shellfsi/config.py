"""Run configuration: flat ``key = value`` text files.

Text after ``#`` and blank lines are ignored. Mode lists (shell
initial data) are ``kind k amplitude`` triples separated by ``;`` with
``kind`` one of ``cos``, ``sin``, ``const``; an empty value means zero.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ParseError, ValidationError
from .geometry import SMOOTHSTEP_SLOPE

_MODE_KINDS = ("cos", "sin", "const")


@dataclass(frozen=True)
class RunConfig:
    # geometry
    L: float = 0.5
    alpha: float = 0.1
    plateau: float = 0.1
    # discretisation
    rings: int = 6
    segments: int = 24
    K: int = 16
    n: int = 10
    basis_cache: str = ""
    # physics
    rho_f: float = 1.0
    rho_s: float = 1.0
    mu: float = 1.0
    stiffness: float = 1.0
    # forcing
    f1: str = "0"
    f2: str = "0"
    g: str = "0"
    # initial data
    eta0: str = ""
    eta_star: str = ""
    v0: str = "lift"
    # time
    T: float = 0.1
    dt: float = 0.01
    # regularisation
    eps: float = 0.0
    mollify: float = 0.0
    # coupling
    mode: str = "coupled"
    zeta: str = "0"
    zeta_file: str = ""
    max_outer: int = 20
    tol: float = 1e-8
    theta: float = 1.0
    # output
    output: str = "out"
    cadence: int = 1
    snapshots: bool = False
    seed: int = 0

    # ------------------------------------------------------------------

    def validate(self, base: Path | None = None) -> "RunConfig":
        def bad(key, msg):
            raise ValidationError(f"{key}: {msg}")

        if not self.L > 0:
            bad("L", "must be positive")
        if not 0 < self.alpha:
            bad("alpha", "must be positive")
        if not self.alpha < self.L:
            bad("alpha", "alpha must be < L")
        if not 0 <= self.plateau < 1:
            bad("plateau", "must lie in [0, 1)")
        if self.alpha * SMOOTHSTEP_SLOPE / ((1 - self.plateau) * self.L) > 0.9:
            bad("alpha", "too large for the blend slope (transform would fold)")
        if self.rings < 2:
            bad("rings", "must be at least 2")
        if self.segments < 8:
            bad("segments", "must be at least 8")
        if self.K < 1:
            bad("K", "must be at least 1")
        if self.n < 1:
            bad("n", "must be at least 1")
        if min(self.rho_f, self.rho_s, self.mu, self.stiffness) <= 0:
            bad("rho_f/rho_s/mu/stiffness", "physical constants must be positive")
        if not self.dt > 0:
            bad("dt", "must be positive")
        if not self.T > 0:
            bad("T", "must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            bad("T", "must be an integer multiple of dt")
        if self.eps < 0:
            bad("eps", "must be nonnegative")
        if self.mollify < 0:
            bad("mollify", "must be nonnegative")
        if self.mode not in ("coupled", "decoupled"):
            bad("mode", "must be 'coupled' or 'decoupled'")
        if self.max_outer < 1:
            bad("max_outer", "must be at least 1")
        if not self.tol > 0:
            bad("tol", "must be positive")
        if not 0 < self.theta <= 1:
            bad("theta", "must lie in (0, 1]")
        if self.cadence < 1:
            bad("cadence", "must be at least 1")
        for key in ("eta0", "eta_star"):
            try:
                parse_modes(getattr(self, key))
            except ParseError as exc:
                bad(key, str(exc))
            for _, k, _ in parse_modes(getattr(self, key)):
                if k > self.K:
                    bad(key, f"mode {k} exceeds K={self.K}")
        base = base or Path(".")
        if self.mode == "decoupled" and self.zeta_file and not (base / self.zeta_file).exists():
            bad("zeta_file", f"file {self.zeta_file!r} does not exist")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def parse_modes(text: str):
    """Parse ``kind k amplitude; ...`` into a list of triples."""
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split()
        if len(parts) != 3 or parts[0] not in _MODE_KINDS:
            raise ParseError(f"bad mode entry {chunk!r}; expected 'cos|sin|const k amplitude'")
        try:
            k, amp = int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ParseError(f"bad mode entry {chunk!r}") from exc
        if k < 0:
            raise ParseError(f"negative wavenumber in {chunk!r}")
        out.append((parts[0], k, amp))
    return out


def _convert(name, raw: str, typ):
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ParseError(f"{name}: cannot read {raw!r} as {typ}") from exc


def parse_config(text: str, base: Path | None = None) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError(f"line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in types:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ParseError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, types[key])
    return RunConfig(**values).validate(base)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        from .errors import IOFailure

        raise IOFailure(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_text())
