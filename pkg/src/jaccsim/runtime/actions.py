"""Action graphs: the compile / copy / execute / sync form of a task graph."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional


class ActionKind(enum.Enum):
    COMPILE = "COMPILE"
    COPY_IN = "COPY_IN"
    EXECUTE = "EXECUTE"
    COPY_OUT = "COPY_OUT"
    SYNC = "SYNC"


@dataclass(frozen=True)
class CopyItem:
    obj: str
    entries: tuple  # schema entry names, ('*',) for arrays

    def label(self) -> str:
        if self.entries == ("*",):
            return self.obj
        return f"{self.obj}({','.join(self.entries)})"


@dataclass(frozen=True)
class Action:
    id: int
    kind: ActionKind
    task: Optional[int] = None
    device: Optional[int] = None
    kernel: Optional[str] = None
    items: tuple = ()  # CopyItems for COPY_IN / COPY_OUT
    deps: tuple = ()

    def objects(self) -> tuple:
        return tuple(i.obj for i in self.items)

    def describe(self) -> str:
        parts = [f"{self.id}:", self.kind.value]
        if self.kernel is not None:
            parts.append(f"kernel={self.kernel}")
        if self.items:
            parts.append("obj=" + "+".join(i.label() for i in self.items))
        if self.task is not None:
            parts.append(f"task={self.task}")
        if self.device is not None:
            parts.append(f"dev={self.device}")
        parts.append("deps=" + (",".join(str(d) for d in self.deps) or "-"))
        return " ".join(parts)


@dataclass
class ActionGraph:
    actions: list = field(default_factory=list)

    def by_id(self) -> dict:
        return {a.id: a for a in self.actions}

    def count(self, kind: ActionKind, obj: Optional[str] = None) -> int:
        return sum(1 for a in self.actions if a.kind is kind and (obj is None or obj in a.objects()))

    def dump(self) -> str:
        return "\n".join(a.describe() for a in self.actions)

    def validate(self):
        """Acyclic, ordered topologically, and every EXECUTE waits on its inputs."""
        seen = set()
        for a in self.actions:
            for d in a.deps:
                if d not in seen:
                    raise ValueError(f"action {a.id} depends on {d}, which does not precede it")
            seen.add(a.id)
        ids = self.by_id()
        for a in self.actions:
            if a.kind is ActionKind.EXECUTE:
                closure = _ancestors(ids, a.id)
                for b in self.actions:
                    if b.task == a.task and b.kind is ActionKind.COPY_IN and b.id not in closure:
                        raise ValueError(f"EXECUTE {a.id} does not wait for COPY_IN {b.id}")
                if not any(ids[x].kind is ActionKind.COMPILE for x in closure):
                    raise ValueError(f"EXECUTE {a.id} has no COMPILE")
        if not self.actions or self.actions[-1].kind is not ActionKind.SYNC:
            raise ValueError("action graph must end in SYNC")
        sync = self.actions[-1]
        closure = _ancestors(ids, sync.id)
        for a in self.actions[:-1]:
            if a.kind is ActionKind.COPY_OUT and a.id not in closure:
                raise ValueError(f"SYNC does not wait for COPY_OUT {a.id}")


def _ancestors(ids: dict, start: int) -> set:
    out, stack = set(), list(ids[start].deps)
    while stack:
        x = stack.pop()
        if x in out:
            continue
        out.add(x)
        stack.extend(ids[x].deps)
    return out


# -- lowering -----------------------------------------------------------------


@dataclass(frozen=True)
class TaskShape:
    """What lowering needs to know about one task."""

    kernel: str
    device: int
    reads: tuple  # CopyItems copied in
    writes: tuple  # CopyItems copied out
    preds: tuple = ()  # task indices this task depends on


def lower_tasks(shapes: list) -> ActionGraph:
    """Naive lowering: per task COMPILE, COPY_IN per input, EXECUTE, COPY_OUT per output."""
    acts = []
    tails = {}

    def add(kind, **kw):
        a = Action(len(acts), kind, **kw)
        acts.append(a)
        return a.id

    for t, s in enumerate(shapes):
        after = tuple(x for p in s.preds for x in tails[p])
        c = add(ActionKind.COMPILE, task=t, device=s.device, kernel=s.kernel)
        cis = [add(ActionKind.COPY_IN, task=t, device=s.device, items=(it,), deps=after) for it in s.reads]
        ex = add(ActionKind.EXECUTE, task=t, device=s.device, kernel=s.kernel, deps=tuple(sorted({c, *cis, *after})))
        cos = [add(ActionKind.COPY_OUT, task=t, device=s.device, items=(it,), deps=(ex,)) for it in s.writes]
        tails[t] = (ex, *cos)
    final = sorted(a.id for a in acts if a.kind in (ActionKind.EXECUTE, ActionKind.COPY_OUT))
    add(ActionKind.SYNC, deps=tuple(final))
    return ActionGraph(acts)


# -- optimization -------------------------------------------------------------


def _drop(acts: list, gone: set) -> list:
    """Remove actions, letting dependants inherit the removed actions' deps."""
    ids = {a.id: a for a in acts}
    memo = {}

    def resolve(d):
        if d not in gone:
            return {d}
        if d not in memo:
            memo[d] = set()
            out = set()
            for x in ids[d].deps:
                out |= resolve(x)
            memo[d] = out
        return memo[d]

    out = []
    for a in acts:
        if a.id in gone:
            continue
        deps = set()
        for d in a.deps:
            deps |= resolve(d)
        out.append(replace(a, deps=tuple(sorted(deps))))
    return out


def eliminate_transfers(acts: list) -> list:
    """Drop copies whose data is already where it is needed.

    Walks tasks in order tracking, per object entry, which locations (host
    or a device) hold its latest value. A COPY_IN is unnecessary for entries
    its device already holds; a COPY_OUT survives only if some later COPY_IN
    on another device, or the final host state, needs its entries.
    """
    holders = {}
    last_out = {}
    provider = {}  # (obj, entry, device) -> COPY_IN that brought it there
    extra = {}  # task -> deps its EXECUTE gains from skipped copies
    needed = set()
    gone = set()
    trimmed = {}
    for a in acts:
        if a.kind is ActionKind.COPY_IN:
            keep_items = []
            for it in a.items:
                missing = []
                for e in it.entries:
                    key = (it.obj, e)
                    h = holders.setdefault(key, {"host"})
                    if a.device in h:
                        p = provider.get((it.obj, e, a.device))
                        if p is not None:
                            extra.setdefault(a.task, set()).add(p)
                        continue
                    provider[(it.obj, e, a.device)] = a.id
                    if "host" not in h:
                        needed.add(last_out[key])
                        h.add("host")
                    h.add(a.device)
                    missing.append(e)
                if missing:
                    keep_items.append(CopyItem(it.obj, tuple(missing)))
            if keep_items:
                trimmed[a.id] = tuple(keep_items)
            else:
                gone.add(a.id)
        elif a.kind is ActionKind.COPY_OUT:
            for it in a.items:
                for e in it.entries:
                    holders[(it.obj, e)] = {a.device}
                    last_out[(it.obj, e)] = a.id
                    provider.pop((it.obj, e, a.device), None)
    for key, h in holders.items():
        if "host" not in h:
            needed.add(last_out[key])
    for a in acts:
        if a.kind is ActionKind.COPY_OUT and a.id not in needed:
            gone.add(a.id)
    out = []
    for a in acts:
        if a.id in trimmed:
            a = replace(a, items=trimmed[a.id])
        if a.kind is ActionKind.EXECUTE and a.task in extra:
            a = replace(a, deps=tuple(sorted(set(a.deps) | extra[a.task])))
        out.append(a)
    return _drop(out, gone)


def merge_actions(acts: list) -> list:
    """Coalesce each EXECUTE's COPY_INs into one batch and share identical COMPILEs."""
    gone = set()
    redirect = {}
    first_compile = {}
    batches = {}
    for a in acts:
        if a.kind is ActionKind.COMPILE:
            key = (a.kernel, a.device)
            if key in first_compile:
                redirect[a.id] = first_compile[key]
                gone.add(a.id)
            else:
                first_compile[key] = a.id
        elif a.kind is ActionKind.COPY_IN:
            batches.setdefault((a.task, a.device), []).append(a)
    out = []
    merged = {}
    for group in batches.values():
        if len(group) > 1:
            head = group[0]
            items = tuple(i for g in group for i in g.items)
            deps = tuple(sorted({d for g in group for d in g.deps}))
            merged[head.id] = replace(head, items=items, deps=deps)
            for g in group[1:]:
                redirect[g.id] = head.id
                gone.add(g.id)
    for a in acts:
        if a.id in gone:
            continue
        a = merged.get(a.id, a)
        out.append(replace(a, deps=tuple(sorted({redirect.get(d, d) for d in a.deps}))))
    return out


def reorder_actions(acts: list) -> list:
    """Stable topological order with every COMPILE hoisted to the front."""
    compiles = [a for a in acts if a.kind is ActionKind.COMPILE and not a.deps]
    rest = [a for a in acts if a not in compiles]
    sync = [a for a in rest if a.kind is ActionKind.SYNC]
    rest = [a for a in rest if a.kind is not ActionKind.SYNC]
    placed = {a.id for a in compiles}
    order = list(compiles)
    pending = list(rest)
    while pending:
        for i, a in enumerate(pending):
            if all(d in placed for d in a.deps):
                order.append(a)
                placed.add(a.id)
                pending.pop(i)
                break
        else:
            raise ValueError("action graph has a cycle")
    return order + sync


def renumber(acts: list) -> list:
    new = {a.id: i for i, a in enumerate(acts)}
    return [replace(a, id=new[a.id], deps=tuple(sorted(new[d] for d in a.deps))) for a in acts]


def optimize_actions(g: ActionGraph) -> ActionGraph:
    """Eliminate redundant transfers, merge copy batches and compiles, hoist compiles."""
    acts = eliminate_transfers(list(g.actions))
    acts = merge_actions(acts)
    acts = reorder_actions(acts)
    return ActionGraph(renumber(acts))
