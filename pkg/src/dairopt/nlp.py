"""Generic NLP container assembled from element-local terms.

Every transcription produces functions that decompose over small groups of
variables (one mesh interval, the boundary points, ...). A :class:`Term`
evaluates a local function on all groups at once and scatters the outputs
into a stacked function vector ``F = [objective, equalities, inequalities]``.
Outputs that share a row are summed, which is how quadrature sums over
intervals are formed. Local Jacobians and Hessians come from
:mod:`dairopt.autodiff` with one seed per local variable.

Sign convention: equalities ``c_E(x) = 0``, inequalities ``c_I(x) <= 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad

ROW_KINDS = ("collocation-defect", "dae", "path", "boundary", "continuity",
             "mirs-cap", "objective-cap", "constraint")


@dataclass(frozen=True)
class Term:
    """Local function scattered into rows of ``F``.

    ``func`` maps an ``(E, nloc)`` array (or jet) to ``(E, nout)``;
    ``index`` is ``(E, nloc)`` flat variable indices; ``rows`` is ``(E, nout)``.
    """

    func: Callable
    index: np.ndarray
    rows: np.ndarray
    name: str = ""


@dataclass
class TranscribedNlp:
    """Objective, equality and inequality functions of a flat vector."""

    n: int
    n_eq: int
    n_ineq: int
    lb: np.ndarray
    ub: np.ndarray
    terms: list
    labels: list
    offset: np.ndarray = None
    scale: np.ndarray = None
    x0: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        nf = 1 + self.n_eq + self.n_ineq
        if self.offset is None:
            self.offset = np.zeros(nf)
        if self.scale is None:
            self.scale = np.ones(nf)
        if len(self.labels) != self.n_eq + self.n_ineq:
            raise ValueError("every constraint row needs a label")

    @property
    def nf(self) -> int:
        return 1 + self.n_eq + self.n_ineq

    @property
    def eq_slice(self) -> slice:
        return slice(1, 1 + self.n_eq)

    @property
    def ineq_slice(self) -> slice:
        return slice(1 + self.n_eq, self.nf)

    # ----- evaluation ------------------------------------------------------
    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        F = np.zeros(self.nf)
        for term in self.terms:
            out = np.asarray(term.func(x[term.index]), dtype=float)
            F += np.bincount(term.rows.ravel(), weights=out.ravel(), minlength=self.nf)
        return self.scale * (F + self.offset)

    def objective(self, x) -> float:
        return float(self.evaluate(x)[0])

    def eq(self, x) -> np.ndarray:
        return self.evaluate(x)[self.eq_slice]

    def ineq(self, x) -> np.ndarray:
        return self.evaluate(x)[self.ineq_slice]

    def derivatives(self, x, weights=None):
        """``F``, sparse Jacobian ``dF/dx`` and optionally ``sum_r weights_r d2F_r``.

        The Jacobian is a CSR matrix; the Hessian (dense) is only formed when
        ``weights`` (length ``nf``) is given.
        """
        x = np.asarray(x, dtype=float)
        n, nf = self.n, self.nf
        F = np.zeros(nf)
        jr, jc, jv = [], [], []
        H = np.zeros(n * n) if weights is not None else None
        order = 2 if weights is not None else 1
        if weights is not None:
            wrow = np.asarray(weights, dtype=float) * self.scale
        for term in self.terms:
            idx = term.index
            E, nloc = idx.shape
            local = ad.seed(x[idx], order=order)
            out = term.func(local)
            if not isinstance(out, ad.Jet):
                out = ad._as_jet(out, local)
            rows = term.rows
            nout = rows.shape[1]
            v = np.broadcast_to(out.v, (E, nout))
            g = np.broadcast_to(out.g, (E, nout, nloc))
            F += np.bincount(rows.ravel(), weights=v.ravel(), minlength=nf)
            jr.append(np.broadcast_to(rows[:, :, None], g.shape).ravel())
            jc.append(np.broadcast_to(idx[:, None, :], g.shape).ravel())
            jv.append(g.ravel())
            if H is not None:
                h = np.broadcast_to(out.h, (E, nout, nloc, nloc))
                hl = np.einsum("eo,eoij->eij", wrow[rows], h)
                hflat = idx[:, :, None] * n + idx[:, None, :]
                H += np.bincount(hflat.ravel(), weights=hl.ravel(), minlength=n * n)
        F = self.scale * (F + self.offset)
        if jr:
            J = sp.coo_matrix((np.concatenate(jv), (np.concatenate(jr), np.concatenate(jc))),
                              shape=(nf, n)).tocsr()
        else:
            J = sp.csr_matrix((nf, n))
        J = sp.diags(self.scale) @ J
        if H is not None:
            H = H.reshape(n, n)
            H = 0.5 * (H + H.T)
        return F, J, H

    def sparsity(self) -> np.ndarray:
        """Declared ``(nf, n)`` nonzero pattern of the Jacobian."""
        pat = np.zeros((self.nf, self.n), dtype=bool)
        for term in self.terms:
            pat[term.rows[:, :, None], term.index[:, None, :]] = True
        return pat

    def label_counts(self) -> dict:
        counts: dict = {}
        for lab in self.labels:
            counts[lab] = counts.get(lab, 0) + 1
        return counts

    def dump(self) -> dict:
        """Introspection summary (dimensions, row labels, sparsity density)."""
        pat = self.sparsity()
        return {
            "n_variables": self.n,
            "n_equalities": self.n_eq,
            "n_inequalities": self.n_ineq,
            "row_labels": self.label_counts(),
            "jacobian_density": float(pat[1:].mean()) if self.nf > 1 and self.n else 0.0,
            "terms": [t.name for t in self.terms],
            "meta": {k: v for k, v in self.meta.items() if isinstance(v, (int, float, str))},
        }

    def dump_json(self) -> str:
        return json.dumps(self.dump(), sort_keys=True, indent=2)


class NlpBuilder:
    """Incremental row allocation for :class:`TranscribedNlp`."""

    def __init__(self, n: int, lb, ub):
        self.n = n
        self.lb = np.asarray(lb, dtype=float)
        self.ub = np.asarray(ub, dtype=float)
        self._eq: list = []
        self._ineq: list = []
        self._obj: list = []

    def objective(self, func, index, name=""):
        index = np.atleast_2d(np.asarray(index, dtype=int))
        self._obj.append((func, index, name))

    def equality(self, func, index, nout, label, name="", shared=False, offset=None,
                 scale=None, extra=()):
        """Add ``nout`` rows per element (or ``nout`` rows total when ``shared``).

        ``extra`` holds further ``(func, index)`` pairs summed into the same
        rows; for shared rows each may have its own element count.
        """
        self._eq.append(self._spec(func, index, nout, label, name, shared, offset, scale, extra))

    def inequality(self, func, index, nout, label, name="", shared=False, offset=None,
                   scale=None, extra=()):
        self._ineq.append(self._spec(func, index, nout, label, name, shared, offset, scale, extra))

    @staticmethod
    def _spec(func, index, nout, label, name, shared, offset, scale, extra):
        index = np.atleast_2d(np.asarray(index, dtype=int))
        extra = [(f, np.atleast_2d(np.asarray(i, dtype=int))) for f, i in extra]
        return dict(func=func, index=index, nout=nout, label=label, name=name or label,
                    shared=shared, offset=offset, scale=scale, extra=extra)

    def build(self, x0=None, meta=None) -> TranscribedNlp:
        terms, labels = [], []
        offsets, scales = [0.0], [1.0]
        for func, index, name in self._obj:
            terms.append(Term(func, index, np.zeros((index.shape[0], 1), dtype=int), name or "objective"))
        row = 1
        for group in (self._eq, self._ineq):
            for spec in group:
                E = spec["index"].shape[0]
                nout = spec["nout"]
                count = nout if spec["shared"] else E * nout
                if spec["shared"]:
                    rows = np.broadcast_to(row + np.arange(nout), (E, nout)).copy()
                else:
                    rows = row + np.arange(E * nout).reshape(E, nout)
                if count:
                    terms.append(Term(spec["func"], spec["index"], rows, spec["name"]))
                    for func, index in spec["extra"]:
                        xrows = (np.broadcast_to(rows[:1], (index.shape[0], nout)).copy()
                                 if spec["shared"] else rows)
                        terms.append(Term(func, index, xrows, spec["name"]))
                labels += [spec["label"]] * count
                off = np.zeros(count) if spec["offset"] is None else np.broadcast_to(spec["offset"], (count,))
                sc = np.ones(count) if spec["scale"] is None else np.broadcast_to(spec["scale"], (count,))
                offsets += list(off)
                scales += list(sc)
                row += count
        n_eq = sum(s["nout"] if s["shared"] else s["index"].shape[0] * s["nout"] for s in self._eq)
        n_ineq = row - 1 - n_eq
        return TranscribedNlp(n=self.n, n_eq=n_eq, n_ineq=n_ineq, lb=self.lb, ub=self.ub,
                              terms=terms, labels=labels, offset=np.array(offsets, dtype=float),
                              scale=np.array(scales, dtype=float), x0=x0, meta=meta or {})


def nlp_from_functions(n, objective, eq=None, ineq=None, n_eq=0, n_ineq=0,
                       lb=None, ub=None, x0=None) -> TranscribedNlp:
    """Wrap plain callables of the full flat vector as a dense NLP.

    Callables receive a 1-D array (or jet) of length ``n`` and return a scalar
    or a 1-D stack built with :mod:`dairopt.autodiff` operations.
    """
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    b = NlpBuilder(n, lb, ub)
    index = np.arange(n)[None, :]

    def lift(fun, nout):
        def local(z):
            out = fun(z[0])
            if isinstance(out, ad.Jet):
                return out.reshape(1, nout)
            return np.reshape(out, (1, nout))
        return local

    b.objective(lift(objective, 1), index, "objective")
    if eq is not None and n_eq:
        b.equality(lift(eq, n_eq), index, n_eq, "constraint")
    if ineq is not None and n_ineq:
        b.inequality(lift(ineq, n_ineq), index, n_ineq, "constraint")
    return b.build(x0=x0)
