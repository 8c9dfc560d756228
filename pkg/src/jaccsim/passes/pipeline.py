"""The fixed compilation pipeline from parsed kernel to assembled VKA."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

from ..errors import CompileError
from ..hir import KernelHIR, SourceUnit
from ..hirfmt import format_kernel
from ..lir import KernelLIR, format_lir, verify
from ..lower import lower_to_lir
from ..memory.schema import kernel_schemas
from ..typecheck import check_kernel
from ..vka.assemble import assemble
from ..vka.emit import emit_vka
from ..vka.program import VkaProgram
from .bridge import isa_bridge
from .exceptions import insert_exception_checks
from .inline import DEFAULT_DEPTH_LIMIT, inline_calls
from .optimize import LIR_PASSES
from .parallelize import parallelize_first_loop_nest
from .predicate import DEFAULT_ARM_LIMIT, predicate_branches
from .scalar_replace import scalar_replace_allocations

HIR_PASSES = ("parallelize", "inline", "scalar_replace", "exceptions")
OPT_PASSES = ("fold", "copyprop", "cse", "licm", "straighten", "dce")
KNOWN_PASSES = HIR_PASSES + ("lower",) + OPT_PASSES + ("predicate", "bridge")
# passes whose removal leaves a kernel that still compiles and runs identically
TOGGLEABLE = ("exceptions",) + OPT_PASSES + ("predicate",)
REQUIRED = tuple(p for p in KNOWN_PASSES if p not in TOGGLEABLE)
MAX_ROUNDS = 10


@dataclass(frozen=True)
class PassConfig:
    inline_depth_limit: int = DEFAULT_DEPTH_LIMIT
    enabled_passes: tuple = TOGGLEABLE
    exception_checks: Optional[bool] = None  # None: take the kernel's own setting
    arm_limit: int = DEFAULT_ARM_LIMIT

    def __post_init__(self):
        object.__setattr__(self, "enabled_passes", tuple(self.enabled_passes))
        if self.inline_depth_limit < 1:
            raise ValueError("inline depth limit must be at least 1")
        seen = set()
        for p in self.enabled_passes:
            if p not in KNOWN_PASSES:
                raise ValueError(f"unknown pass {p!r}")
            if p in seen:
                raise ValueError(f"pass {p!r} listed twice")
            seen.add(p)

    def enabled(self, name: str) -> bool:
        return name in REQUIRED or name in self.enabled_passes

    def without(self, *names) -> "PassConfig":
        return PassConfig(
            self.inline_depth_limit,
            tuple(p for p in self.enabled_passes if p not in names),
            self.exception_checks,
            self.arm_limit,
        )

    def opt_order(self) -> tuple:
        listed = [p for p in self.enabled_passes if p in OPT_PASSES]
        return tuple(listed)


DEFAULT_CONFIG = PassConfig()


@dataclass
class CompiledKernel:
    name: str
    hir: KernelHIR
    lir: KernelLIR
    program: VkaProgram
    vka: str
    schemas: dict
    dumps: dict = field(default_factory=dict)
    rounds: int = 0


def optimize_lir(l: KernelLIR, cfg: PassConfig = DEFAULT_CONFIG, dumps: Optional[dict] = None) -> tuple:
    """Run the enabled machine passes in order until nothing changes; (lir, rounds)."""
    order = cfg.opt_order()
    rounds = 0
    for rounds in range(1, MAX_ROUNDS + 1):
        before = l
        for name in order:
            l = LIR_PASSES[name](l)
            verify(l)
            if dumps is not None:
                dumps[name] = format_lir(l)
        if l == before:
            break
    return l, rounds


def prepare_hir(k: KernelHIR, unit: Optional[SourceUnit], cfg: PassConfig = DEFAULT_CONFIG, dumps: Optional[dict] = None) -> KernelHIR:
    check_kernel(k, unit)
    k = parallelize_first_loop_nest(k)
    if dumps is not None:
        dumps["parallelize"] = format_kernel(k)
    k = inline_calls(k, unit, cfg.inline_depth_limit)
    if dumps is not None:
        dumps["inline"] = format_kernel(k)
    k = scalar_replace_allocations(k, unit)
    if dumps is not None:
        dumps["scalar_replace"] = format_kernel(k)
    checks = k.jacc.exceptions if cfg.exception_checks is None else cfg.exception_checks
    if checks and cfg.enabled("exceptions"):
        k = insert_exception_checks(k)
    if dumps is not None:
        dumps["exceptions"] = format_kernel(k)
    return k


_cache: dict = {}
_cache_lock = threading.Lock()


def compile_kernel(
    k: KernelHIR,
    unit: Optional[SourceUnit] = None,
    cfg: PassConfig = DEFAULT_CONFIG,
    dump: bool = False,
) -> CompiledKernel:
    """Compile `k` through every stage; results are cached per (kernel, unit, config)."""
    key = (k, unit.type_decls if unit else (), unit.funcs if unit else (), cfg)
    if not dump:
        with _cache_lock:
            hit = _cache.get(key)
        if hit is not None:
            return hit
    dumps: Optional[dict] = {} if dump else None
    prepared = prepare_hir(k, unit, cfg, dumps)
    schemas = kernel_schemas(prepared, unit)
    l = lower_to_lir(prepared, schemas, unit)
    verify(l)
    if dumps is not None:
        dumps["lower"] = format_lir(l)
    l, rounds = optimize_lir(l, cfg, dumps)
    if cfg.enabled("predicate") and "predicate" in cfg.enabled_passes:
        l = predicate_branches(l, cfg.arm_limit)
        verify(l)
    if dumps is not None:
        dumps["predicate"] = format_lir(l)
    l = isa_bridge(l)
    verify(l)
    if dumps is not None:
        dumps["bridge"] = format_lir(l)
    text = emit_vka(l)
    program = assemble(text)
    ck = CompiledKernel(k.name, prepared, l, program, text, schemas, dumps or {}, rounds)
    if not dump:
        with _cache_lock:
            _cache[key] = ck
    return ck


def compile_source(unit: SourceUnit, name: str, cfg: PassConfig = DEFAULT_CONFIG, dump: bool = False) -> CompiledKernel:
    try:
        k = unit.kernel(name)
    except KeyError:
        raise CompileError(f"no kernel named {name!r}") from None
    return compile_kernel(k, unit, cfg, dump)


def dump_after(unit: SourceUnit, name: str, pass_name: str, cfg: PassConfig = DEFAULT_CONFIG) -> str:
    """IR text right after `pass_name` (HIR for source-level passes, LIR after lowering)."""
    if pass_name not in KNOWN_PASSES:
        raise ValueError(f"unknown pass {pass_name!r}; choose from {', '.join(KNOWN_PASSES)}")
    ck = compile_source(unit, name, cfg, dump=True)
    if pass_name not in ck.dumps:
        raise ValueError(f"pass {pass_name!r} is disabled in this configuration")
    return ck.dumps[pass_name]
