"""Plan skeleton file format.

Line-oriented UTF-8 text with five sections. `#` starts a comment, blank
lines are ignored. Section order is fixed: nodes, factors, skills,
constraints, goal (constraints and goal may be empty or absent).

    [nodes]
    # id role semantic dim [bounds=lo:hi,lo:hi,...]
    L0 robot pose2d 4
    a1 skill_param raw 4 bounds=-1:1,-1:1,-1:1,-1:1

    [factors]
    # id kind state=k members=a,b key=value... weight=w
    g0 grasped state=0 members=L0,H0 weight=0

    [skills]
    # id name step=k pre=nodes prefactors=ids param=node
    #   effects=old>new,... add=ids remove=ids model=key
    pi1 move step=0 pre=L0,H0 prefactors=g0 param=a1 effects=L0>L1,H0>H1 model=move

    [constraints]
    # external factors; same syntax as [factors] but no state= key
    mu2 fixed_transform members=L1,R1 admissible=0,0.2,1,0 weight=1

    [goal]
    # same syntax as [constraints], plus optional rweight=w
    gf gaussian members=H1 mean=0.5,0,1,0 cov=diag:0.01,0.01,0.05,0.05

A factor declared with `state=k` is active at state k onward until removed;
factors without `state=` only become active when a skill adds them. Skills
sharing the same `step` execute in parallel; their effects are applied as a
union. Unknown keys are rejected.
"""

from __future__ import annotations

import io

import numpy as np

from .graph import (
    FactorKind,
    GoalCondition,
    GraphError,
    PlanGraph,
    Role,
    Semantic,
    SkillFactorSpec,
    SpatialFactorSpec,
    StateGraph,
    apply_effects,
)
from .graph import VariableNode

__all__ = ["ParseError", "parse_skeleton", "serialize_skeleton"]

_SECTIONS = ("nodes", "factors", "skills", "constraints", "goal")

_FACTOR_KEYS = {
    FactorKind.GRASPED: {"members", "weight", "state"},
    FactorKind.ALIGNED: {"members", "weight", "state", "admissible", "family", "w_rot"},
    FactorKind.FIXED_TRANSFORM: {
        "members", "weight", "state", "admissible", "family", "w_rot",
    },
    FactorKind.REACHABLE: {"members", "weight", "state", "center", "radius"},
    FactorKind.GAUSSIAN: {"members", "weight", "state", "mean", "cov"},
    FactorKind.CUSTOM: None,  # any keys
}


class ParseError(Exception):
    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


def _split_kv(tokens: list[str], line_no: int) -> dict[str, str]:
    kv = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParseError(f"expected key=value, got {tok!r}", line_no)
        key, _, val = tok.partition("=")
        if key in kv:
            raise ParseError(f"duplicate key {key!r}", line_no)
        kv[key] = val
    return kv


def _floats(text: str, line_no: int) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ParseError(f"expected comma-separated numbers, got {text!r}", line_no)


def _parse_factor_params(kind: FactorKind, kv: dict[str, str], line_no: int) -> dict:
    allowed = _FACTOR_KEYS.get(kind)
    if allowed is not None:
        unknown = set(kv) - allowed
        if unknown:
            raise ParseError(
                f"unknown key(s) {sorted(unknown)} for factor kind {kind.value}", line_no
            )
    params: dict = {}
    if "mean" in kv:
        params["mean"] = np.array(_floats(kv["mean"], line_no))
    if "cov" in kv:
        text = kv["cov"]
        if text.startswith("diag:"):
            params["cov"] = np.diag(_floats(text[5:], line_no))
        else:
            flat = np.array(_floats(text, line_no))
            n = int(round(len(flat) ** 0.5))
            if n * n != len(flat):
                raise ParseError("cov must be a square row-major matrix", line_no)
            params["cov"] = flat.reshape(n, n)
    if "admissible" in kv:
        transforms = []
        for chunk in kv["admissible"].split(";"):
            if chunk:
                transforms.append(np.array(_floats(chunk, line_no)))
        params["admissible"] = transforms
    if "family" in kv:
        # axis_range:ux,uy,lo,hi,cos,sin - positions t*u for t in [lo,hi],
        # fixed relative rotation (cos,sin); projection clamps t.
        name, _, rest = kv["family"].partition(":")
        if name != "axis_range":
            raise ParseError(f"unknown admissible family {name!r}", line_no)
        vals = _floats(rest, line_no)
        if len(vals) != 6:
            raise ParseError("axis_range family needs ux,uy,lo,hi,cos,sin", line_no)
        params["family"] = ("axis_range", vals)
    if "w_rot" in kv:
        params["w_rot"] = float(kv["w_rot"])
    if "center" in kv:
        params["center"] = np.array(_floats(kv["center"], line_no))
    if "radius" in kv:
        params["radius"] = float(kv["radius"])
    if kind is FactorKind.CUSTOM:
        for key, val in kv.items():
            if key in ("members", "weight", "state", "rweight"):
                continue
            params.setdefault(key, val)
    return params


def _ids(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.split(",") if v)


def parse_skeleton(document: str) -> PlanGraph:
    """Parse a skeleton document into a validated, laid-out PlanGraph."""
    nodes: dict[str, VariableNode] = {}
    factor_specs: dict[str, SpatialFactorSpec] = {}
    factor_state: dict[str, int] = {}
    factor_lines: dict[str, int] = {}
    skills: list[SkillFactorSpec] = []
    constraints: list[SpatialFactorSpec] = []
    goal_factors: list[SpatialFactorSpec] = []
    goal_weights: list[float] = []

    section = None
    for line_no, raw in enumerate(io.StringIO(document), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ParseError(f"unknown section [{section}]", line_no)
            continue
        if section is None:
            raise ParseError("content before any section header", line_no)
        tokens = line.split()

        if section == "nodes":
            if len(tokens) < 4:
                raise ParseError("node line needs: id role semantic dim", line_no)
            node_id, role, semantic, dim = tokens[:4]
            kv = _split_kv(tokens[4:], line_no)
            unknown = set(kv) - {"bounds"}
            if unknown:
                raise ParseError(f"unknown node key(s) {sorted(unknown)}", line_no)
            bounds = None
            if "bounds" in kv:
                rows = []
                for chunk in kv["bounds"].split(","):
                    lo, _, hi = chunk.partition(":")
                    try:
                        rows.append((float(lo), float(hi)))
                    except ValueError:
                        raise ParseError(f"bad bounds chunk {chunk!r}", line_no)
                bounds = np.array(rows)
            if node_id in nodes:
                raise ParseError(f"duplicate node id {node_id!r}", line_no)
            try:
                nodes[node_id] = VariableNode(
                    id=node_id,
                    role=Role(role),
                    semantic=Semantic(semantic),
                    dim=int(dim),
                    bounds=bounds,
                )
            except (ValueError, GraphError) as exc:
                raise ParseError(str(exc), line_no) from exc

        elif section in ("factors", "constraints", "goal"):
            if len(tokens) < 2:
                raise ParseError("factor line needs: id kind key=value...", line_no)
            factor_id, kind_name = tokens[:2]
            kv = _split_kv(tokens[2:], line_no)
            try:
                kind = FactorKind(kind_name)
            except ValueError:
                raise ParseError(f"unknown factor kind {kind_name!r}", line_no)
            if "members" not in kv:
                raise ParseError("factor needs members=", line_no)
            members = _ids(kv["members"])
            for m in members:
                if m not in nodes:
                    raise ParseError(
                        f"factor {factor_id!r} references unknown node {m!r}", line_no
                    )
            rweight = float(kv.pop("rweight", "1")) if section == "goal" else None
            weight = float(kv.get("weight", "1"))
            params = _parse_factor_params(kind, kv, line_no)
            try:
                spec = SpatialFactorSpec(
                    id=factor_id, kind=kind, members=members, params=params, weight=weight
                )
            except GraphError as exc:
                raise ParseError(str(exc), line_no) from exc
            if section == "factors":
                if factor_id in factor_specs:
                    raise ParseError(f"duplicate factor id {factor_id!r}", line_no)
                factor_specs[factor_id] = spec
                factor_lines[factor_id] = line_no
                if "state" in kv:
                    factor_state[factor_id] = int(kv["state"])
            elif section == "constraints":
                if "state" in kv:
                    raise ParseError("constraints take no state= key", line_no)
                constraints.append(spec)
            else:
                goal_factors.append(spec)
                goal_weights.append(rweight)

        elif section == "skills":
            if len(tokens) < 2:
                raise ParseError("skill line needs: id name key=value...", line_no)
            skill_id, skill_name = tokens[:2]
            kv = _split_kv(tokens[2:], line_no)
            unknown = set(kv) - {
                "step", "pre", "prefactors", "param", "effects", "add", "remove", "model",
            }
            if unknown:
                raise ParseError(f"unknown skill key(s) {sorted(unknown)}", line_no)
            for req in ("step", "pre", "param", "effects"):
                if req not in kv:
                    raise ParseError(f"skill needs {req}=", line_no)
            effect_map = {}
            for chunk in _ids(kv["effects"]):
                old, sep, new = chunk.partition(">")
                if not sep:
                    raise ParseError(f"bad effect binding {chunk!r}, need old>new", line_no)
                effect_map[old] = new
            for ref in (*_ids(kv["pre"]), kv["param"], *effect_map, *effect_map.values()):
                if ref not in nodes:
                    raise ParseError(
                        f"skill {skill_id!r} references unknown node {ref!r}", line_no
                    )
            for ref in (*_ids(kv.get("prefactors", "")),
                        *_ids(kv.get("add", "")), *_ids(kv.get("remove", ""))):
                if ref not in factor_specs:
                    raise ParseError(
                        f"skill {skill_id!r} references unknown factor {ref!r}", line_no
                    )
            if nodes[kv["param"]].role is not Role.SKILL_PARAM:
                raise ParseError(
                    f"skill {skill_id!r}: param node {kv['param']!r} must have role "
                    f"skill_param", line_no
                )
            try:
                skills.append(
                    SkillFactorSpec(
                        id=skill_id,
                        skill_name=skill_name,
                        step=int(kv["step"]),
                        pre_nodes=_ids(kv["pre"]),
                        pre_factors=_ids(kv.get("prefactors", "")),
                        param_node=kv["param"],
                        effect_map=effect_map,
                        added_factors=_ids(kv.get("add", "")),
                        removed_factors=_ids(kv.get("remove", "")),
                        model_ref=kv.get("model", skill_name),
                    )
                )
            except GraphError as exc:
                raise ParseError(str(exc), line_no) from exc

    states = _build_states(nodes, factor_specs, factor_state, skills)
    goal = GoalCondition(factors=tuple(goal_factors), residual_weights=tuple(goal_weights))
    for gf in goal.factors:
        live = {n for sg in states for n in sg.nodes}
        for m in gf.members:
            if m not in live and nodes[m].role is not Role.SKILL_PARAM:
                raise ParseError(f"goal factor {gf.id!r} references node {m!r} "
                                 f"absent from every state")
    return PlanGraph(
        nodes=nodes,
        states=states,
        skills=tuple(sorted(skills, key=lambda s: (s.step, s.id))),
        spatial_factors=factor_specs,
        external_constraints=tuple(constraints),
        goal=goal,
    )


def _build_states(nodes, factor_specs, factor_state, skills) -> tuple[StateGraph, ...]:
    """Forward symbolic simulation: apply per-step unions of skill effects."""
    param_ids = {sk.param_node for sk in skills}
    all_effects = {n for sk in skills for n in sk.effect_nodes}
    initial_nodes = tuple(
        sorted(n for n in nodes if n not in param_ids and n not in all_effects)
    )
    initial_factors = tuple(
        f for f, k in factor_state.items() if k == 0
    )
    states = [StateGraph(index=0, nodes=initial_nodes, factors=initial_factors)]
    n_steps = 1 + max((sk.step for sk in skills), default=-1)
    by_step: dict[int, list] = {}
    for sk in skills:
        by_step.setdefault(sk.step, []).append(sk)
    for k in range(n_steps):
        step_skills = by_step.get(k, [])
        cur = states[-1]
        for sk in step_skills:
            for old in sk.effect_map:
                if old not in cur.nodes:
                    raise GraphError(
                        f"skill {sk.id}: effect source node {old} absent from "
                        f"state {k} (cyclic or misordered temporal dependency)"
                    )
                if sk.effect_map[old] in cur.nodes:
                    raise GraphError(
                        f"skill {sk.id}: fresh node {sk.effect_map[old]} already "
                        f"lives in state {k} (cyclic temporal dependency)"
                    )
        nxt = apply_effects(cur, step_skills, factor_specs)
        extra = tuple(
            f for f, st in factor_state.items() if st == k + 1 and f not in nxt.factors
        )
        nxt = StateGraph(index=nxt.index, nodes=nxt.nodes, factors=nxt.factors + extra)
        states.append(nxt)
    return tuple(states)


def _format_params(spec: SpatialFactorSpec) -> str:
    parts = []
    p = spec.params
    if "mean" in p:
        parts.append("mean=" + ",".join(repr(float(v)) for v in p["mean"]))
    if "cov" in p:
        parts.append("cov=" + ",".join(repr(float(v)) for v in np.asarray(p["cov"]).ravel()))
    if "admissible" in p:
        parts.append(
            "admissible=" + ";".join(
                ",".join(repr(float(v)) for v in tr) for tr in p["admissible"]
            )
        )
    if "family" in p:
        name, vals = p["family"]
        parts.append(f"family={name}:" + ",".join(repr(float(v)) for v in vals))
    if "w_rot" in p:
        parts.append(f"w_rot={p['w_rot']!r}")
    if "center" in p:
        parts.append("center=" + ",".join(repr(float(v)) for v in p["center"]))
    if "radius" in p:
        parts.append(f"radius={p['radius']!r}")
    if spec.kind is FactorKind.CUSTOM:
        for key, val in p.items():
            if key not in ("mean", "cov", "admissible", "family", "w_rot", "center", "radius"):
                parts.append(f"{key}={val}")
    return " ".join(parts)


def serialize_skeleton(plan: PlanGraph) -> str:
    """Emit a document that reparses to an isomorphic PlanGraph."""
    out = ["[nodes]"]
    for node_id in sorted(plan.nodes):
        n = plan.nodes[node_id]
        line = f"{n.id} {n.role.value} {n.semantic.value} {n.dim}"
        if n.bounds is not None:
            line += " bounds=" + ",".join(f"{lo!r}:{hi!r}" for lo, hi in n.bounds)
        out.append(line)

    first_active: dict[str, int] = {}
    for sg in plan.states:
        for f in sg.factors:
            first_active.setdefault(f, sg.index)
    added_by_skill = {f for sk in plan.skills for f in sk.added_factors}

    out.append("")
    out.append("[factors]")
    for factor_id in sorted(plan.spatial_factors):
        spec = plan.spatial_factors[factor_id]
        line = f"{spec.id} {spec.kind.value} members={','.join(spec.members)}"
        if factor_id in first_active and factor_id not in added_by_skill:
            line += f" state={first_active[factor_id]}"
        params = _format_params(spec)
        if params:
            line += " " + params
        line += f" weight={spec.weight!r}"
        out.append(line)

    out.append("")
    out.append("[skills]")
    for sk in plan.skills:
        line = (
            f"{sk.id} {sk.skill_name} step={sk.step} pre={','.join(sk.pre_nodes)}"
        )
        if sk.pre_factors:
            line += f" prefactors={','.join(sk.pre_factors)}"
        line += f" param={sk.param_node}"
        line += " effects=" + ",".join(f"{o}>{n}" for o, n in sk.effect_map.items())
        if sk.added_factors:
            line += f" add={','.join(sk.added_factors)}"
        if sk.removed_factors:
            line += f" remove={','.join(sk.removed_factors)}"
        line += f" model={sk.model_ref}"
        out.append(line)

    if plan.external_constraints:
        out.append("")
        out.append("[constraints]")
        for spec in plan.external_constraints:
            line = f"{spec.id} {spec.kind.value} members={','.join(spec.members)}"
            params = _format_params(spec)
            if params:
                line += " " + params
            line += f" weight={spec.weight!r}"
            out.append(line)

    if plan.goal.factors:
        out.append("")
        out.append("[goal]")
        for spec, rw in zip(plan.goal.factors, plan.goal.residual_weights):
            line = f"{spec.id} {spec.kind.value} members={','.join(spec.members)}"
            params = _format_params(spec)
            if params:
                line += " " + params
            line += f" weight={spec.weight!r} rweight={rw!r}"
            out.append(line)
    return "\n".join(out) + "\n"
