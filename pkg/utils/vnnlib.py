"""
VNN-LIB robustness specifications.

Accepted grammar (anything else is a syntax error):
    ; comment lines
    (declare-const X_i Real) / (declare-const Y_j Real)
    (assert (<= X_i c)) / (assert (>= X_i c))
    (assert atom) or (assert (or atom atom ...))
    atom := (>= Y_a Y_b) | (<= Y_a Y_b) | (>= Y_a c) | (<= Y_a c)

The property is the negation of robustness: the file is satisfiable iff some
input in the box makes another class score at least as high as the target.
"""

from typing import List, Optional, Sequence, Tuple, Union
import csv
import logging
import os
import re

import numpy as np
from pydantic import BaseModel, Field

from utils.errors import ConflictingBoundError, MissingBoundError, SpecError, VnnLibSyntaxError
from utils.specgen import (
    FeatureMask, FeatureSchema, InputSpec, build_feature_spec, build_pixel_spec,
)

logger = logging.getLogger(__name__)

MANIFEST_HEADER = ["file", "sample", "mask", "epsilon", "target"]

_VAR = re.compile(r"^([XY])_(\d+)$")


class PropertyAtom(BaseModel):
    """lhs op rhs where lhs is Y_lhs and rhs is Y_rhs_var or a constant"""
    op: str = Field(..., pattern="^(>=|<=)$")
    lhs: int
    rhs_var: Optional[int] = None
    rhs_const: Optional[float] = None

    def holds(self, logits: Sequence[float]) -> bool:
        left = logits[self.lhs]
        right = logits[self.rhs_var] if self.rhs_var is not None else self.rhs_const
        return left >= right if self.op == ">=" else left <= right


class VnnLibSpec(BaseModel):
    num_inputs: int
    num_outputs: int
    input_bounds: List[Tuple[float, float]]
    property: List[PropertyAtom]
    comments: List[str] = Field(default_factory=list)

    def is_violated_by(self, logits: Sequence[float]) -> bool:
        """True when the disjunction holds, i.e. robustness is violated"""
        return any(atom.holds(logits) for atom in self.property)

    def target_class(self) -> int:
        """The class every (>= Y_j Y_t) atom protects"""
        targets = {atom.rhs_var for atom in self.property if atom.op == ">=" and atom.rhs_var is not None}
        if len(targets) != 1 or any(atom.rhs_var is None or atom.op != ">=" for atom in self.property):
            raise SpecError("property is not a single-target robustness query")
        return targets.pop()

    def to_input_spec(self) -> InputSpec:
        lower = np.array([lo for lo, _ in self.input_bounds])
        upper = np.array([hi for _, hi in self.input_bounds])
        return InputSpec(x=(lower + upper) / 2.0, lower=lower, upper=upper,
                         epsilon=float(np.max(upper - lower) / 2.0) if lower.size else 0.0,
                         mask="vnnlib", target=self.target_class())


def _num(value: float) -> str:
    return f"{value:.17g}"


def _atom_text(atom: PropertyAtom) -> str:
    rhs = f"Y_{atom.rhs_var}" if atom.rhs_var is not None else _num(atom.rhs_const)
    return f"({atom.op} Y_{atom.lhs} {rhs})"


def render(spec: VnnLibSpec) -> str:
    """Deterministic text for a VnnLibSpec"""
    lines = [f"; {comment}" if comment else ";" for comment in spec.comments]
    lines.extend(f"(declare-const X_{i} Real)" for i in range(spec.num_inputs))
    lines.extend(f"(declare-const Y_{j} Real)" for j in range(spec.num_outputs))
    for i, (lo, hi) in enumerate(spec.input_bounds):
        lines.append(f"(assert (>= X_{i} {_num(lo)}))")
        lines.append(f"(assert (<= X_{i} {_num(hi)}))")
    atoms = [_atom_text(atom) for atom in spec.property]
    if len(atoms) == 1:
        lines.append(f"(assert {atoms[0]})")
    else:
        lines.append("(assert (or " + " ".join(atoms) + "))")
    return "\n".join(lines) + "\n"


def to_vnnlib_spec(spec: InputSpec, target: int, num_outputs: int,
                   comments: Optional[List[str]] = None) -> VnnLibSpec:
    if not 0 <= target < num_outputs:
        raise SpecError(f"target {target} outside [0, {num_outputs})")
    if comments is None:
        clipping = "pixel bounds clipped to [0, 1]" if spec.clipped else "feature bounds unclipped (scaled space)"
        comments = [f"robustness of class {target}", f"mask {spec.mask}, epsilon {spec.epsilon:g}", clipping]
    atoms = [PropertyAtom(op=">=", lhs=j, rhs_var=target) for j in range(num_outputs) if j != target]
    if not atoms:
        raise SpecError("robustness needs at least two output classes")
    return VnnLibSpec(
        num_inputs=spec.dim,
        num_outputs=num_outputs,
        input_bounds=[(float(lo), float(hi)) for lo, hi in zip(spec.lower, spec.upper)],
        property=atoms,
        comments=comments,
    )


def emit(spec: InputSpec, target: int, num_outputs: int, comments: Optional[List[str]] = None) -> str:
    return render(to_vnnlib_spec(spec, target, num_outputs, comments))


# Parsing

def _tokenize(text: str) -> Tuple[List[Tuple[str, int]], List[str]]:
    """Tokens with line numbers; leading comment lines are kept separately"""
    tokens: List[Tuple[str, int]] = []
    comments: List[str] = []
    seen_code = False
    for number, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith(";"):
            if not seen_code:
                body = stripped[1:]
                comments.append(body[1:] if body.startswith(" ") else body)
            continue
        code = stripped.split(";", 1)[0]
        if code.strip():
            seen_code = True
        for token in code.replace("(", " ( ").replace(")", " ) ").split():
            tokens.append((token, number))
    return tokens, comments


def _read_sexp(tokens: List[Tuple[str, int]], pos: int):
    token, line = tokens[pos]
    if token == ")":
        raise VnnLibSyntaxError("unexpected ')'", line)
    if token != "(":
        return (token, line), pos + 1
    items = []
    pos += 1
    while True:
        if pos >= len(tokens):
            raise VnnLibSyntaxError("unbalanced parentheses", line)
        if tokens[pos][0] == ")":
            return (items, line), pos + 1
        item, pos = _read_sexp(tokens, pos)
        items.append(item)


def _atom_value(node, line: int) -> str:
    value, _ = node
    if isinstance(value, list):
        raise VnnLibSyntaxError("expected a variable or number", line)
    return value


def _variable(token: str) -> Optional[Tuple[str, int]]:
    match = _VAR.match(token)
    return (match.group(1), int(match.group(2))) if match else None


def _number(token: str, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise VnnLibSyntaxError(f"expected a number, got {token!r}", line) from None


def parse(text: str) -> VnnLibSpec:
    tokens, comments = _tokenize(text)
    declared = {"X": set(), "Y": set()}
    lower: dict = {}
    upper: dict = {}
    atoms: List[PropertyAtom] = []
    property_line: Optional[int] = None

    pos = 0
    while pos < len(tokens):
        (expr, line), pos = _read_sexp(tokens, pos)
        if not isinstance(expr, list) or not expr:
            raise VnnLibSyntaxError("expected a parenthesized command", line)
        head = _atom_value(expr[0], line)
        if head == "declare-const":
            if len(expr) != 3 or _atom_value(expr[2], line) != "Real":
                raise VnnLibSyntaxError("declare-const must be (declare-const NAME Real)", line)
            var = _variable(_atom_value(expr[1], line))
            if var is None:
                raise VnnLibSyntaxError("variables must be named X_i or Y_j", line)
            declared[var[0]].add(var[1])
        elif head == "assert":
            if len(expr) != 2 or not isinstance(expr[1][0], list):
                raise VnnLibSyntaxError("assert takes one parenthesized term", line)
            term = expr[1][0]
            op = _atom_value(term[0], line) if term else ""
            if op in (">=", "<=") and len(term) == 3:
                left = _variable(_atom_value(term[1], line))
                if left is not None and left[0] == "X":
                    index = left[1]
                    if index not in declared["X"]:
                        raise VnnLibSyntaxError(f"bound on undeclared variable X_{index}", line)
                    value = _number(_atom_value(term[2], line), line)
                    side = lower if op == ">=" else upper
                    if index in side and side[index] != value:
                        raise ConflictingBoundError(f"X_{index} has two different {'lower' if op == '>=' else 'upper'} bounds", line)
                    side[index] = value
                    continue
                atoms_here = [_parse_atom(term, line, declared)]
            elif op == "or" and len(term) >= 2:
                atoms_here = [_parse_atom(sub[0], sub[1], declared) for sub in term[1:]]
            else:
                raise VnnLibSyntaxError(f"unsupported assertion {op!r}", line)
            if property_line is not None:
                raise VnnLibSyntaxError("only one output property assertion is supported", line)
            property_line = line
            atoms = atoms_here
        else:
            raise VnnLibSyntaxError(f"unsupported command {head!r}", line)

    num_inputs = len(declared["X"])
    num_outputs = len(declared["Y"])
    for kind, count in (("X", num_inputs), ("Y", num_outputs)):
        if declared[kind] != set(range(count)):
            raise VnnLibSyntaxError(f"{kind} variables must be numbered 0..{count - 1}")
    bounds = []
    for i in range(num_inputs):
        if i not in lower:
            raise MissingBoundError(f"missing lower bound for X_{i}")
        if i not in upper:
            raise MissingBoundError(f"missing upper bound for X_{i}")
        if lower[i] > upper[i]:
            raise ConflictingBoundError(f"X_{i} lower bound {lower[i]} exceeds upper bound {upper[i]}")
        bounds.append((lower[i], upper[i]))
    if not atoms:
        raise VnnLibSyntaxError("no output property asserted")
    return VnnLibSpec(num_inputs=num_inputs, num_outputs=num_outputs, input_bounds=bounds,
                      property=atoms, comments=comments)


def _parse_atom(term, line: int, declared) -> PropertyAtom:
    if not isinstance(term, list) or len(term) != 3:
        raise VnnLibSyntaxError("property atoms must be (op Y_a Y_b) or (op Y_a c)", line)
    op = _atom_value(term[0], line)
    if op not in (">=", "<="):
        raise VnnLibSyntaxError(f"unsupported comparison {op!r}", line)
    left = _variable(_atom_value(term[1], line))
    if left is None or left[0] != "Y":
        raise VnnLibSyntaxError("property atoms must start with an output variable", line)
    if left[1] not in declared["Y"]:
        raise VnnLibSyntaxError(f"property uses undeclared variable Y_{left[1]}", line)
    right_token = _atom_value(term[2], line)
    right = _variable(right_token)
    if right is not None:
        if right[0] != "Y" or right[1] not in declared["Y"]:
            raise VnnLibSyntaxError(f"property uses undeclared or input variable {right_token}", line)
        return PropertyAtom(op=op, lhs=left[1], rhs_var=right[1])
    return PropertyAtom(op=op, lhs=left[1], rhs_const=_number(right_token, line))


def read_vnnlib(path: str) -> VnnLibSpec:
    with open(path, "r", encoding="utf-8") as f:
        return parse(f.read())


def write_vnnlib(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def spec_file_name(dataset: str, sample: int, mask: str, epsilon: float) -> str:
    # shortest round-trip repr, so distinct epsilons never share a file
    label = repr(float(epsilon))
    if label.endswith(".0"):
        label = label[:-2]
    return f"{dataset}_{sample}_{mask}_{label}.vnnlib"


def batch_emit(samples: Sequence[Tuple[Sequence[float], int]], eps_list: Sequence[float],
               masks: Sequence[Union[FeatureMask, str]], schema: Optional[FeatureSchema],
               out_dir: str, num_outputs: int, dataset: str = "dataset",
               sample_ids: Optional[Sequence[int]] = None) -> List[dict]:
    """
    Write one file per (sample, mask, epsilon) and a manifest.csv.

    Args:
        samples: (x, y) pairs; y is the protected class
        eps_list: percent of feature range (feature mode) or k for k/255 (pixel mode)
        masks: feature masks; ignored in pixel mode (schema is None)
        schema: feature schema, or None for pixel mode
        out_dir: destination directory (created if missing)
        num_outputs: number of classes
        dataset: file name prefix
        sample_ids: ids used in file names (defaults to 0..len-1)

    Returns:
        Manifest rows in (sample, mask, epsilon) order
    """
    if not samples or not eps_list:
        raise SpecError("batch_emit needs at least one sample and one epsilon")
    masks = [m if isinstance(m, FeatureMask) else FeatureMask.parse(m) for m in masks] if schema else []
    sample_ids = list(sample_ids) if sample_ids is not None else list(range(len(samples)))
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise SpecError(f"cannot create {out_dir}: {e}") from e

    rows = []
    for sample_id, (x, y) in zip(sample_ids, samples):
        for mask in (masks or [None]):
            for eps in sorted(eps_list):
                if mask is None:
                    spec = build_pixel_spec(x, y, eps)
                else:
                    spec = build_feature_spec(x, y, eps, schema, mask)
                mask_label = spec.mask
                name = spec_file_name(dataset, sample_id, mask_label, eps)
                comments = [f"{dataset} sample {sample_id}"] + to_vnnlib_spec(spec, int(y), num_outputs).comments
                write_vnnlib(os.path.join(out_dir, name), emit(spec, int(y), num_outputs, comments))
                rows.append({"file": name, "sample": sample_id, "mask": mask_label,
                             "epsilon": eps, "target": int(y)})
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=MANIFEST_HEADER)
        writer.writeheader()
        writer.writerows(rows)
    logger.info("wrote %d VNN-LIB files to %s", len(rows), out_dir)
    return rows
