"""Assembled VKA kernels."""

from __future__ import annotations

from dataclasses import dataclass

from ..lir import KernelLIR


@dataclass(frozen=True)
class VkaProgram:
    """A validated VKA module.

    The instruction stream is held as LIR blocks (the two share one
    instruction set); `registers` maps each register class to its declared
    count.
    """

    lir: KernelLIR
    registers: tuple = ()

    @property
    def kernel_name(self) -> str:
        return self.lir.name

    @property
    def params(self) -> tuple:
        return self.lir.params

    def instruction_count(self) -> int:
        return self.lir.instr_count()

    def text(self) -> str:
        from .emit import emit_vka

        return emit_vka(self.lir)


def as_lir(p) -> KernelLIR:
    return p.lir if isinstance(p, VkaProgram) else p
