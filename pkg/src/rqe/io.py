"""JSON and CSV formats for games, policies, reports and manifests.

Every JSON document carries ``schema_version``; anything other than
SCHEMA_VERSION is rejected. Floats go through ``json`` (shortest repr), so
values round-trip bit-exactly. CSV floats use 17 significant digits.
"""

import csv
import io
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError, SchemaError
from .game import MatrixGameSpec, RationalitySpec
from .markov import MarkovGameSpec, PolicyProfile
from .risk import RiskSpec

SCHEMA_VERSION = 1


def fmt(x):
    return format(float(x), ".17g")


class _Reader:
    """Field access that reports the JSON path of whatever went wrong."""

    def __init__(self, data, path="$"):
        self.data = data
        self.path = path

    def get(self, key, default=...):
        if not isinstance(self.data, dict):
            raise SchemaError(f"{self.path}: expected an object")
        if key not in self.data:
            if default is ...:
                raise SchemaError(f"{self.path}.{key}: missing field")
            return default
        return self.data[key]

    def sub(self, key):
        return _Reader(self.get(key), f"{self.path}.{key}")

    def array(self, key, ndim=None):
        where = f"{self.path}.{key}"
        try:
            arr = np.array(self.get(key), dtype=float)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: not a numeric array ({exc})") from None
        if ndim is not None and arr.ndim != ndim:
            raise SchemaError(f"{where}: expected {ndim} dimensions, got shape {arr.shape}")
        return arr

    def build(self, key, fn):
        try:
            return fn(self.get(key))
        except SchemaError:
            raise
        except (InvalidInputError, TypeError, ValueError, KeyError) as exc:
            raise SchemaError(f"{self.path}.{key}: {exc}") from None


def check_version(data, kind=None, path="$"):
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    version = data.get("schema_version")
    if version is None:
        raise SchemaError(f"{path}.schema_version: missing field")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}.schema_version: unsupported version {version!r} (this build reads {SCHEMA_VERSION})")
    if kind is not None and data.get("kind") != kind:
        raise SchemaError(f"{path}.kind: expected {kind!r}, got {data.get('kind')!r}")


def _risk_list(items):
    if isinstance(items, dict):
        items = [items]
    return tuple(RiskSpec(d["kind"], d["tau"]) for d in items)


def _rationality_list(items):
    if isinstance(items, dict):
        items = [items]
    return tuple(RationalitySpec(d["kind"], d["epsilon"]) for d in items)


def matrix_game_to_dict(game):
    out = {"schema_version": SCHEMA_VERSION, "kind": "matrix_game",
           "payoffs": [R.tolist() for R in game.payoffs], "risk_mode": game.risk_mode}
    if game.risk is not None:
        out["risk"] = [r.to_dict() for r in game.risk]
    if game.rationality is not None:
        out["rationality"] = [r.to_dict() for r in game.rationality]
    return out


def matrix_game_from_dict(data):
    check_version(data, "matrix_game")
    r = _Reader(data)
    payoffs = r.get("payoffs")
    if not isinstance(payoffs, list) or not payoffs:
        raise SchemaError("$.payoffs: expected a non-empty list of tensors")
    tensors = tuple(_array_at(p, f"$.payoffs[{k}]") for k, p in enumerate(payoffs))
    risk = r.build("risk", _risk_list) if "risk" in data else None
    rat = r.build("rationality", _rationality_list) if "rationality" in data else None
    try:
        return MatrixGameSpec(tensors, risk, rat, data.get("risk_mode", "aggregate"))
    except InvalidInputError as exc:
        raise SchemaError(f"$: {exc}") from None


def _array_at(value, where):
    try:
        return np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: not a numeric array ({exc})") from None


def _kernel_to_json(K):
    if sp.issparse(K):
        K = K.tocsr()
        return {"format": "csr", "shape": list(K.shape), "data": K.data.tolist(),
                "indices": K.indices.tolist(), "indptr": K.indptr.tolist()}
    return np.asarray(K).tolist()


def _kernel_from_json(value, where):
    if isinstance(value, dict):
        try:
            if value.get("format") != "csr":
                raise SchemaError(f"{where}.format: only 'csr' is supported")
            return sp.csr_matrix((np.array(value["data"], dtype=float), np.array(value["indices"], dtype=np.int64),
                                  np.array(value["indptr"], dtype=np.int64)), shape=tuple(value["shape"]))
        except KeyError as exc:
            raise SchemaError(f"{where}.{exc.args[0]}: missing field") from None
    arr = _array_at(value, where)
    if arr.ndim != 2:
        raise SchemaError(f"{where}: expected rows over next states, got shape {arr.shape}")
    return arr


def markov_game_to_dict(game):
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "markov_game",
        "horizon": game.horizon,
        "n_states": game.n_states,
        "action_counts": list(game.action_counts),
        "rewards": game.rewards.tolist(),
        "transitions": [_kernel_to_json(K) for K in game.transitions],
        "env_risk": [r.to_dict() for r in game.env_risk],
        "pol_risk": [r.to_dict() for r in game.pol_risk],
        "rationality": [r.to_dict() for r in game.rationality],
        "recursion_mode": game.recursion_mode,
    }


def markov_game_from_dict(data):
    check_version(data, "markov_game")
    r = _Reader(data)
    trans = r.get("transitions")
    if not isinstance(trans, list) or not trans:
        raise SchemaError("$.transitions: expected a non-empty list of kernels")
    kernels = tuple(_kernel_from_json(K, f"$.transitions[{h}]") for h, K in enumerate(trans))
    try:
        return MarkovGameSpec(
            int(r.get("horizon")), int(r.get("n_states")), tuple(int(a) for a in r.get("action_counts")),
            r.array("rewards"), kernels,
            r.build("env_risk", _risk_list), r.build("pol_risk", _risk_list),
            r.build("rationality", _rationality_list), r.get("recursion_mode", "utility"))
    except InvalidInputError as exc:
        text = str(exc)
        field = next((f for f in ("transition", "reward", "horizon", "action", "recursion_mode", "env_risk")
                      if f in text), None)
        where = {"transition": "transitions", "reward": "rewards", "action": "action_counts"}.get(field, field)
        raise SchemaError(f"$.{where}: {text}" if where else f"$: {text}") from None


def game_to_dict(game):
    if isinstance(game, MatrixGameSpec):
        return matrix_game_to_dict(game)
    return markov_game_to_dict(game)


def game_from_dict(data):
    check_version(data)
    kind = data.get("kind")
    if kind == "matrix_game":
        return matrix_game_from_dict(data)
    if kind == "markov_game":
        return markov_game_from_dict(data)
    raise SchemaError(f"$.kind: unknown document kind {kind!r}")


def policy_to_dict(policy):
    return {"schema_version": SCHEMA_VERSION, "kind": "policy", "probs": [p.tolist() for p in policy.probs]}


def policy_from_dict(data):
    check_version(data, "policy")
    probs = _Reader(data).get("probs")
    try:
        return PolicyProfile(tuple(_array_at(p, f"$.probs[{i}]") for i, p in enumerate(probs)))
    except InvalidInputError as exc:
        raise SchemaError(f"$.probs: {exc}") from None


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def write_json(path, data):
    Path(path).write_text(json.dumps(_plain(data), indent=1) + "\n")


def dumps(data):
    return json.dumps(_plain(data), indent=1)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def load_game(path):
    return game_from_dict(read_json(path))


def save_game(path, game):
    write_json(path, game_to_dict(game))


# CSV --------------------------------------------------------------------

def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc.strerror})") from None
    if not rows:
        raise SchemaError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def strategies_rows(strategies):
    """(player, action, probability) rows for a matrix solution."""
    return [(i, a, float(p)) for i, s in enumerate(strategies) for a, p in enumerate(s)]


def policy_rows(policy):
    """One row per (player, step, state); steps are 1-based. Columns p0.. are padded with blanks."""
    width = max(p.shape[2] for p in policy.probs)
    header = ["player", "step", "state"] + [f"p{a}" for a in range(width)]
    rows = []
    for i, P in enumerate(policy.probs):
        H, S, A = P.shape
        for h in range(H):
            for s in range(S):
                rows.append([i, h + 1, s] + [float(x) for x in P[h, s]] + [""] * (width - A))
    return header, rows


def policy_from_csv(path, game):
    header, rows = read_csv(path)
    if header[:3] != ["player", "step", "state"]:
        raise SchemaError(f"{path}: header must start with player,step,state")
    probs = [np.full((game.horizon, game.n_states, a), np.nan) for a in game.action_counts]
    for line, row in enumerate(rows, start=2):
        try:
            i, h, s = int(row[0]), int(row[1]) - 1, int(row[2])
            A = game.action_counts[i]
            probs[i][h, s] = [float(x) for x in row[3:3 + A]]
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}:{line}: bad policy row ({exc})") from None
    for i, P in enumerate(probs):
        if np.isnan(P).any():
            raise SchemaError(f"{path}: policy of player {i} is missing rows")
    try:
        return PolicyProfile(tuple(probs))
    except InvalidInputError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def value_rows(tables, gaps=None):
    n, H1, S = tables.V.shape
    header = ["player", "step", "state", "V", "V_eps"] + (["gap"] if gaps is not None else [])
    rows = []
    for i in range(n):
        for h in range(H1 - 1):
            for s in range(S):
                row = [i, h + 1, s, float(tables.V[i, h, s]), float(tables.V_eps[i, h, s])]
                if gaps is not None:
                    row.append(float(gaps[i, h, s]))
                rows.append(row)
    return header, rows
