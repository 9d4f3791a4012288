"""Trainable parameter sets for dense and factorised networks.

A parameterisation turns a flat ``{name: array}`` dict into materialised
layer matrices (:class:`~dirnet.rnnrt.graph.Net`) and pulls gradients on
those matrices back onto its own parameters.
"""
from __future__ import annotations

import numpy as np

from ..matcore import CsrMatrix
from ..model import CompressedLayer, CompressedModel, LayerWeights, NetworkModel
from ..shiftdict import Dictionary, ShiftOp
from .graph import Net


class DenseParams:
    def __init__(self, model: NetworkModel):
        self.kind = model.kind
        self.vocab = model.vocab
        self.n_layers = len(model.layers)
        self.values = {"embed": model.embed.copy(), "out": model.out_proj.copy(),
                       "out_b": model.out_bias.copy()}
        for l, layer in enumerate(model.layers):
            self.values[f"wh{l}"] = layer.w_h.copy()
            self.values[f"wx{l}"] = layer.w_x.copy()
            self.values[f"b{l}"] = layer.bias.copy()

    def net(self) -> Net:
        v = self.values
        layers = [(v[f"wh{l}"], v[f"wx{l}"], v[f"b{l}"]) for l in range(self.n_layers)]
        return Net(layers, v["embed"], v["out"], v["out_b"], self.kind)

    def pullback(self, g: Net) -> dict:
        out = {"embed": g.embed, "out": g.out, "out_b": g.out_b}
        for l, (dwh, dwx, db) in enumerate(g.layers):
            out[f"wh{l}"], out[f"wx{l}"], out[f"b{l}"] = dwh, dwx, db
        return out

    def masks(self) -> dict:
        return {}

    def after_step(self):
        pass

    def to_model(self) -> NetworkModel:
        v = self.values
        layers = [LayerWeights(v[f"wh{l}"].copy(), v[f"wx{l}"].copy(), v[f"b{l}"].copy(), self.kind)
                  for l in range(self.n_layers)]
        return NetworkModel(layers, v["embed"].copy(), v["out"].copy(), v["out_b"].copy(),
                            self.vocab, self.kind)


class CompressedParams:
    """Dictionaries, code values on their fixed support, biases and the dense ends.

    Codes are held as dense arrays multiplied by a fixed 0/1 mask, so only
    the stored nonzeros ever move. ``freeze_dict`` keeps the dictionaries
    fixed.
    """

    def __init__(self, cmodel: CompressedModel, freeze_dict: bool = False):
        self.template = cmodel
        self.kind = cmodel.kind
        self.freeze_dict = freeze_dict
        self.values = {"embed": cmodel.embed.copy(), "out": cmodel.out_proj.copy(),
                       "out_b": cmodel.out_bias.copy()}
        self._masks = {}
        self.offsets = []
        for l, cl in enumerate(cmodel.layers):
            self.values[f"D{l}"] = cl.dict_h.atoms.copy()
            if not cl.shared:
                self.values[f"Dx{l}"] = cl.dict_x.atoms.copy()
            zh, zx = cl.z_h.to_dense(), cl.z_x.to_dense()
            self.values[f"zh{l}"], self.values[f"zx{l}"] = zh, zx
            self._masks[f"zh{l}"] = (zh != 0).astype(np.float64)
            self._masks[f"zx{l}"] = (zx != 0).astype(np.float64)
            self.values[f"b{l}"] = cl.bias.copy()
            offs = [int(o) for o in np.unique(cl.offsets_h[zh != 0])]
            self.offsets.append([(o, ShiftOp(o, cl.shift_mode), (cl.offsets_h == o) & (zh != 0))
                                 for o in offs])

    def masks(self) -> dict:
        m = dict(self._masks)
        if self.freeze_dict:
            for name in self.values:
                if name.startswith("D"):
                    m[name] = np.zeros_like(self.values[name])
        return m

    def _dx_name(self, l):
        return f"D{l}" if f"Dx{l}" not in self.values else f"Dx{l}"

    def net(self) -> Net:
        v = self.values
        layers = []
        for l in range(len(self.template.layers)):
            D, zh = v[f"D{l}"], v[f"zh{l}"]
            w_h = np.zeros((D.shape[0], zh.shape[1]))
            for _, op, sel in self.offsets[l]:
                w_h += op.apply(D @ np.where(sel, zh, 0.0))
            w_x = v[self._dx_name(l)] @ v[f"zx{l}"]
            layers.append((w_h, w_x, v[f"b{l}"]))
        return Net(layers, v["embed"], v["out"], v["out_b"], self.kind)

    def pullback(self, g: Net) -> dict:
        v = self.values
        out = {"embed": g.embed, "out": g.out, "out_b": g.out_b}
        for l, (dwh, dwx, db) in enumerate(g.layers):
            D, zh = v[f"D{l}"], v[f"zh{l}"]
            dD = np.zeros_like(D)
            dzh = np.zeros_like(zh)
            for _, op, sel in self.offsets[l]:
                dM = op.adjoint(dwh)
                dD += dM @ np.where(sel, zh, 0.0).T
                dzh += np.where(sel, D.T @ dM, 0.0)
            dxn = self._dx_name(l)
            Dx, zx = v[dxn], v[f"zx{l}"]
            dzx = (Dx.T @ dwx) * self._masks[f"zx{l}"]
            if dxn == f"D{l}":
                dD += dwx @ zx.T
            else:
                out[dxn] = dwx @ zx.T
            out[f"D{l}"] = dD
            out[f"zh{l}"] = dzh * self._masks[f"zh{l}"]
            out[f"zx{l}"] = dzx
            out[f"b{l}"] = db
        return out

    def after_step(self):
        """Re-normalise atoms, rescale the code rows they feed, keep the support."""
        v = self.values
        for l in range(len(self.template.layers)):
            pairs = [(f"D{l}", [f"zh{l}"] + ([] if f"Dx{l}" in v else [f"zx{l}"]))]
            if f"Dx{l}" in v:
                pairs.append((f"Dx{l}", [f"zx{l}"]))
            for dname, codes in pairs:
                D = v[dname]
                s = np.linalg.norm(D, axis=0)
                s = np.where(s > 0, s, 1.0)
                D /= s
                for z in codes:
                    v[z] *= s[:, None]
            for z in (f"zh{l}", f"zx{l}"):
                m = self._masks[z] > 0
                vals = v[z]
                vals[~m] = 0.0
                # a stored coefficient that lands exactly on zero is nudged so the
                # support survives serialisation
                hit = m & (vals == 0.0)
                if np.any(hit):
                    vals[hit] = np.finfo(np.float64).tiny

    def to_model(self) -> CompressedModel:
        v = self.values
        layers = []
        for l, cl in enumerate(self.template.layers):
            zh, zx = v[f"zh{l}"].copy(), v[f"zx{l}"].copy()
            dx = Dictionary(v[f"Dx{l}"].copy()) if f"Dx{l}" in v else None
            layers.append(CompressedLayer(
                Dictionary(v[f"D{l}"].copy()), CsrMatrix.from_dense(zh), cl.offsets_h.copy(),
                CsrMatrix.from_dense(zx), v[f"b{l}"].copy(), cl.kind, dx, cl.shift_mode,
                cl.recon_err_h, cl.recon_err_x, cl.pruned))
        t = self.template
        return CompressedModel(layers, v["embed"].copy(), v["out"].copy(), v["out_b"].copy(),
                               t.vocab, t.kind, dict(t.meta))
