"""Validated data model and JSON ingestion for period and spectral data.

Documents are UTF-8 JSON.  Complex numbers are always objects
``{"re": <float>, "im": <float>}`` -- no string forms.  Matrices are row-major
arrays of arrays of complex records.  Saving is canonical: keys sorted, floats
printed with 17 significant digits, so identical values serialize to identical
bytes.

Schemas
-------
flow data::

    {"genus": g, "mode": "jacobian"|"prym",
     "B": [[c]], "U": [c], "V": [c], "A": [c],
     "p": c, "E": c, "C": c?}            # C optional in jacobian mode

two-puncture spectral data (the Baker-Akhiezer inputs)::

    {"genus": g, "B": [[c]],
     "abel_plus": [c], "abel_minus": [c],
     "u_vectors": {"+1": [c], "-1": [c], ...},   # sign then 1-based index
     "points": [{"label": str, "abel": [c], "omega": {"+1": c, ...}}],
     "C": c}

Prym spectral data::

    {"genus": g, "Pi": [[c]],
     "abel_prym_plus": [c], "U": [c], "V": [c],
     "points": [{"label": str, "abel_prym": [c], "omega": {"+1": c, "-1": c}}],
     "C": c}

All constants (C, omega values, Abel images) are ingested, never derived here;
inconsistent data is meant to surface later as large residuals.  Two
conditions live with the data producer and are not checkable without curve
geometry: the divisor-class constraint on the pole divisor of the
Baker-Akhiezer function, and the normalization of the second-kind
differentials behind the ingested omega values.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GenusOutOfRange, ParseError, SchemaError, ValidationError
from .thetacore import PeriodMatrix, validate_period_matrix


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------

def _fmt_float(x):
    if x != x or x in (float("inf"), float("-inf")):
        raise ValidationError("non-finite float cannot be serialized")
    return format(float(x), ".17g")


def _canon(obj):
    if isinstance(obj, dict):
        items = sorted(obj.items())
        inner = ",".join(json.dumps(k) + ":" + _canon(v) for k, v in items)
        return "{" + inner + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canon(v) for v in obj) + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    raise ValidationError(f"cannot serialize {type(obj)!r}")


def canonical_json_bytes(document) -> bytes:
    """Canonical UTF-8 serialization (sorted keys, 17 significant digits)."""
    return _canon(document).encode("utf-8")


def complex_record(c):
    c = complex(c)
    return {"re": c.real, "im": c.imag}


def _parse_complex(node, where):
    if not isinstance(node, dict) or set(node) != {"re", "im"}:
        raise SchemaError(f"{where}: expected a complex record {{re, im}}")
    try:
        value = complex(float(node["re"]), float(node["im"]))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: bad complex record") from exc
    if not np.isfinite(value.real) or not np.isfinite(value.imag):
        raise ValidationError(f"{where}: non-finite value")
    return value


def _parse_vector(node, g, where):
    if not isinstance(node, list) or len(node) != g:
        raise SchemaError(f"{where}: expected a length-{g} vector")
    return np.array([_parse_complex(c, where) for c in node], dtype=complex)


def _parse_matrix(node, g, where):
    if not isinstance(node, list) or len(node) != g:
        raise SchemaError(f"{where}: expected a {g}x{g} matrix")
    return np.array([_parse_vector(row, g, where) for row in node], dtype=complex)


def _vector_records(v):
    return [complex_record(c) for c in np.atleast_1d(v)]


def _matrix_records(M):
    return [_vector_records(row) for row in np.atleast_2d(M)]


def _require(doc, key, where):
    if key not in doc:
        raise SchemaError(f"{where}: missing field '{key}'")
    return doc[key]


def _loads(stream):
    if isinstance(stream, (bytes, bytearray)):
        text = stream.decode("utf-8")
    else:
        text = stream
    try:
        doc = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("top-level document must be an object")
    return doc


# ---------------------------------------------------------------------------
# flow data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowData:
    """Candidate data (B, U, V, A, p, E[, C]) for the linear conditions."""

    B: PeriodMatrix
    U: np.ndarray
    V: np.ndarray
    A: np.ndarray
    p: complex
    E: complex
    C: complex | None = None
    mode: str = "prym"

    def __post_init__(self):
        g = self.B.genus
        for name in ("U", "V", "A"):
            v = np.asarray(getattr(self, name), dtype=complex)
            if v.shape != (g,):
                raise ValidationError(f"{name} must be a length-{g} vector")
            if not np.all(np.isfinite(v.real)) or not np.all(np.isfinite(v.imag)):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, v)
            v.setflags(write=False)
        if self.mode not in ("jacobian", "prym"):
            raise ValidationError(f"mode must be 'jacobian' or 'prym', got {self.mode!r}")
        if np.linalg.norm(self.U) == 0.0:
            raise ValidationError("U must be nonzero")
        if self.mode == "prym" and np.linalg.norm(self.V) == 0.0:
            raise ValidationError("V must be nonzero in prym mode")
        for name in ("p", "E"):
            c = complex(getattr(self, name))
            if not np.isfinite(c.real) or not np.isfinite(c.imag):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, c)
        if self.mode == "prym":
            if self.C is None:
                raise ValidationError("C is required in prym mode")
        if self.C is not None:
            c = complex(self.C)
            if not np.isfinite(c.real) or not np.isfinite(c.imag):
                raise ValidationError("C must be finite")
            object.__setattr__(self, "C", c)

    @property
    def genus(self):
        return self.B.genus


def load_flow_data(document) -> FlowData:
    doc = _loads(document)
    where = "flow data"
    genus = _require(doc, "genus", where)
    if not isinstance(genus, int) or genus < 1:
        raise SchemaError(f"{where}: genus must be a positive integer")
    mode = _require(doc, "mode", where)
    B = validate_period_matrix(_parse_matrix(_require(doc, "B", where), genus, "B"))
    U = _parse_vector(_require(doc, "U", where), genus, "U")
    V = _parse_vector(_require(doc, "V", where), genus, "V")
    A = _parse_vector(_require(doc, "A", where), genus, "A")
    p = _parse_complex(_require(doc, "p", where), "p")
    E = _parse_complex(_require(doc, "E", where), "E")
    C = _parse_complex(doc["C"], "C") if "C" in doc else None
    return FlowData(B=B, U=U, V=V, A=A, p=p, E=E, C=C, mode=mode)


def save_flow_data(d: FlowData) -> bytes:
    doc = {
        "genus": d.genus,
        "mode": d.mode,
        "B": _matrix_records(d.B.entries),
        "U": _vector_records(d.U),
        "V": _vector_records(d.V),
        "A": _vector_records(d.A),
        "p": complex_record(d.p),
        "E": complex_record(d.E),
    }
    if d.C is not None:
        doc["C"] = complex_record(d.C)
    return canonical_json_bytes(doc)


# ---------------------------------------------------------------------------
# spectral data
# ---------------------------------------------------------------------------

def _parse_sign_index(key, where):
    if not isinstance(key, str) or len(key) < 2 or key[0] not in "+-":
        raise SchemaError(f"{where}: keys must look like '+1' or '-2', got {key!r}")
    try:
        idx = int(key[1:])
    except ValueError as exc:
        raise SchemaError(f"{where}: bad index in key {key!r}") from exc
    if idx < 1:
        raise SchemaError(f"{where}: index must be >= 1 in key {key!r}")
    return (key[0], idx)


@dataclass(frozen=True)
class PointRecord:
    label: str
    abel_image: np.ndarray
    omega_values: dict  # (sign, index) -> complex


@dataclass(frozen=True)
class SpectralData:
    """Ingested two-puncture Baker-Akhiezer data (never derived from a curve)."""

    B: PeriodMatrix
    abel_plus: np.ndarray
    abel_minus: np.ndarray
    u_vectors: dict  # (sign, index) -> g-vector
    point_records: tuple
    C: complex

    @property
    def genus(self):
        return self.B.genus

    def point(self, label):
        for rec in self.point_records:
            if rec.label == label:
                return rec
        from .errors import UnknownPoint

        raise UnknownPoint(f"no point record labelled {label!r}")


@dataclass(frozen=True)
class PrymSpectralData:
    """Ingested data for the Prym-theta form of the potential operator."""

    Pi: PeriodMatrix
    abel_prym_plus: np.ndarray
    U: np.ndarray
    V: np.ndarray
    point_records: tuple
    C: complex

    @property
    def genus(self):
        return self.Pi.genus

    def point(self, label):
        for rec in self.point_records:
            if rec.label == label:
                return rec
        from .errors import UnknownPoint

        raise UnknownPoint(f"no point record labelled {label!r}")


def _parse_points(node, g, omega_field, abel_field):
    if not isinstance(node, list):
        raise SchemaError("points: expected a list")
    records = []
    for i, rec in enumerate(node):
        where = f"points[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(f"{where}: expected an object")
        label = _require(rec, "label", where)
        if not isinstance(label, str):
            raise SchemaError(f"{where}: label must be a string")
        abel = _parse_vector(_require(rec, abel_field, where), g, f"{where}.{abel_field}")
        omega_node = _require(rec, "omega", where)
        if not isinstance(omega_node, dict):
            raise SchemaError(f"{where}.omega: expected an object")
        omega = {}
        for key, val in omega_node.items():
            omega[_parse_sign_index(key, f"{where}.omega")] = _parse_complex(
                val, f"{where}.omega[{key}]"
            )
        records.append(PointRecord(label=label, abel_image=abel, omega_values=omega))
    labels = [r.label for r in records]
    if len(set(labels)) != len(labels):
        raise ValidationError("points: duplicate labels")
    return tuple(records)


def load_spectral_data(document) -> SpectralData:
    doc = _loads(document)
    where = "spectral data"
    genus = _require(doc, "genus", where)
    if not isinstance(genus, int) or genus < 1:
        raise SchemaError(f"{where}: genus must be a positive integer")
    B = validate_period_matrix(_parse_matrix(_require(doc, "B", where), genus, "B"))
    abel_plus = _parse_vector(_require(doc, "abel_plus", where), genus, "abel_plus")
    abel_minus = _parse_vector(_require(doc, "abel_minus", where), genus, "abel_minus")
    u_node = _require(doc, "u_vectors", where)
    if not isinstance(u_node, dict) or not u_node:
        raise SchemaError("u_vectors: expected a nonempty object")
    u_vectors = {}
    for key, val in u_node.items():
        u_vectors[_parse_sign_index(key, "u_vectors")] = _parse_vector(
            val, genus, f"u_vectors[{key}]"
        )
    points = _parse_points(_require(doc, "points", where), genus, "omega", "abel")
    C = _parse_complex(_require(doc, "C", where), "C")
    data = SpectralData(
        B=B,
        abel_plus=abel_plus,
        abel_minus=abel_minus,
        u_vectors=u_vectors,
        point_records=points,
        C=C,
    )
    _check_spectral_references(data.u_vectors, points)
    return data


def _check_spectral_references(u_vectors, points):
    for rec in points:
        for key in rec.omega_values:
            if key not in u_vectors:
                raise ValidationError(
                    f"point {rec.label!r} references flow {key} with no u-vector"
                )


def save_spectral_data(sd: SpectralData) -> bytes:
    doc = {
        "genus": sd.genus,
        "B": _matrix_records(sd.B.entries),
        "abel_plus": _vector_records(sd.abel_plus),
        "abel_minus": _vector_records(sd.abel_minus),
        "u_vectors": {
            f"{sign}{idx}": _vector_records(v) for (sign, idx), v in sd.u_vectors.items()
        },
        "points": [
            {
                "label": rec.label,
                "abel": _vector_records(rec.abel_image),
                "omega": {
                    f"{sign}{idx}": complex_record(v)
                    for (sign, idx), v in rec.omega_values.items()
                },
            }
            for rec in sd.point_records
        ],
        "C": complex_record(sd.C),
    }
    return canonical_json_bytes(doc)


def load_prym_spectral_data(document) -> PrymSpectralData:
    doc = _loads(document)
    where = "prym spectral data"
    genus = _require(doc, "genus", where)
    if not isinstance(genus, int) or genus < 1:
        raise SchemaError(f"{where}: genus must be a positive integer")
    Pi = validate_period_matrix(_parse_matrix(_require(doc, "Pi", where), genus, "Pi"))
    abel_prym_plus = _parse_vector(
        _require(doc, "abel_prym_plus", where), genus, "abel_prym_plus"
    )
    U = _parse_vector(_require(doc, "U", where), genus, "U")
    V = _parse_vector(_require(doc, "V", where), genus, "V")
    if np.linalg.norm(U) == 0.0 or np.linalg.norm(V) == 0.0:
        raise ValidationError("U and V must be nonzero")
    points = _parse_points(_require(doc, "points", where), genus, "omega", "abel_prym")
    C = _parse_complex(_require(doc, "C", where), "C")
    return PrymSpectralData(
        Pi=Pi, abel_prym_plus=abel_prym_plus, U=U, V=V, point_records=points, C=C
    )


def save_prym_spectral_data(pd: PrymSpectralData) -> bytes:
    doc = {
        "genus": pd.genus,
        "Pi": _matrix_records(pd.Pi.entries),
        "abel_prym_plus": _vector_records(pd.abel_prym_plus),
        "U": _vector_records(pd.U),
        "V": _vector_records(pd.V),
        "points": [
            {
                "label": rec.label,
                "abel_prym": _vector_records(rec.abel_image),
                "omega": {
                    f"{sign}{idx}": complex_record(v)
                    for (sign, idx), v in rec.omega_values.items()
                },
            }
            for rec in pd.point_records
        ],
        "C": complex_record(pd.C),
    }
    return canonical_json_bytes(doc)


# ---------------------------------------------------------------------------
# random test-case generation
# ---------------------------------------------------------------------------

def random_ppav(genus, seed) -> PeriodMatrix:
    """Seeded random period matrix B = S + i (Q^T Q + g I).

    S is symmetric with uniform(-1/2, 1/2) entries and Q has standard normal
    entries, so Im(B) >= g and the matrix always validates.
    """
    if not isinstance(genus, (int, np.integer)) or not 1 <= genus <= 6:
        raise GenusOutOfRange(f"genus must be in 1..6, got {genus}")
    rng = np.random.default_rng(int(seed))
    S = np.zeros((genus, genus))
    for i in range(genus):
        for j in range(i, genus):
            S[i, j] = S[j, i] = rng.uniform(-0.5, 0.5)
    Q = rng.standard_normal((genus, genus))
    B = S + 1j * (Q.T @ Q + genus * np.eye(genus))
    return validate_period_matrix(B)
