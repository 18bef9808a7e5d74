"""Two-phase embedding ranker over both feedback channels.

Four embedding maps turn engagement vectors into k-dimensional latents: the
user's positive row and the item's positive column feed the positive
channel, the user's negative row (with the same item column) feeds the
negative channel. Three scalar scores come out: the positive-channel inner
product, the negative-channel inner product, and a bilinear interaction of
the two user latents through a k x k coupling matrix.

Phase 1 trains the embedding maps and the coupling matrix against the
observed engagement value as the shared target for all three scores, with
squared error plus L2 on the produced latents. Phase 2 freezes everything
below the head and trains a small dense head on the three scores with
binary cross-entropy, producing a calibrated engagement probability.

All gradients are analytic; training is plain seeded mini-batch descent so
runs are bit-for-bit reproducible.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .factorization import FactorModel
from .feedback import FeedbackMatrices
from .util import substream

_MAGIC = b"HINN"
_HEADER = struct.Struct("<4sHIIH")  # magic, version, m, n, k

_CLAMP = 1e-12


@dataclass
class RankingConfig:
    k: int = 10
    alpha: float = 1.0        # weight of the negative-channel fit term
    gamma: float = 1.0        # weight of the interaction fit term
    reg_pos: float = 0.01     # L2 on positive-channel latents
    reg_neg: float = 0.01     # L2 on negative-channel latents
    lr: float = 0.05
    batch_size: int = 256
    epochs_phase1: int = 30
    epochs_phase2: int = 40
    hidden: int | None = None  # optional rectifier layer inside each map
    head_hidden: int = 8
    use_n2p: bool = True
    warm_threshold: int = 5   # observed train events needed for the warm path
    seed: int = 0


class EmbeddingMap:
    """Map from a feedback vector to a k-vector: a single linear transform
    by default, optionally with one hidden rectifier layer."""

    def __init__(self, in_dim, k, hidden=None, rng=None, scale=0.1):
        rng = rng or np.random.default_rng(0)
        if hidden is None:
            self.weights = [rng.normal(0.0, scale, size=(in_dim, k))]
        else:
            self.weights = [
                rng.normal(0.0, scale, size=(in_dim, hidden)),
                rng.normal(0.0, scale, size=(hidden, k)),
            ]

    @property
    def k(self):
        return self.weights[-1].shape[1]

    def forward(self, x):
        """Returns (latents, cache). x is (B, in_dim), sparse or dense."""
        if len(self.weights) == 1:
            return np.asarray(x @ self.weights[0]), (x,)
        z = np.asarray(x @ self.weights[0])
        h = np.maximum(z, 0.0)
        return h @ self.weights[1], (x, z, h)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Weight gradients given the gradient at the output latents."""
        if len(self.weights) == 1:
            (x,) = cache
            return [_t_dot(x, grad_out)]
        x, z, h = cache
        gw2 = h.T @ grad_out
        gz = (grad_out @ self.weights[1].T) * (z > 0)
        return [_t_dot(x, gz), gw2]


def _t_dot(x, g):
    out = x.T @ g
    return np.asarray(out)


def _as_2d(x):
    if sparse.issparse(x):
        return x
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


class RankingModel:
    """Embedding maps, interaction coupling, and prediction head."""

    def __init__(self, m, n, config: RankingConfig):
        self.m = m
        self.n = n
        self.config = config
        rng = substream(config.seed, "ranking_init")
        k, hid = config.k, config.hidden
        self.user_pos = EmbeddingMap(n, k, hid, rng)
        self.item_pos = EmbeddingMap(m, k, hid, rng)
        self.user_neg = EmbeddingMap(n, k, hid, rng)
        self.item_neg = EmbeddingMap(m, k, hid, rng)
        self.coupling = rng.normal(0.0, 0.1, size=(k, k))
        h = config.head_hidden
        self.head_w1 = rng.normal(0.0, 0.5, size=(3, h))
        self.head_b1 = np.zeros(h)
        self.head_w2 = rng.normal(0.0, 0.5, size=h)
        self.head_b2 = np.zeros(1)
        self.phase1_losses = []
        self.phase2_losses = []

    # ---------------------------------------------------------------- scores

    def channel_scores(self, x_row, y_row, x_col, with_cache=False):
        """The three relevance scores for (user, item) inputs.

        ``x_row``/``y_row`` are the user's positive/negative vectors over
        items, ``x_col`` the item's positive vector over users. Accepts
        single vectors or (B, dim) batches. With the negative side gated
        off, the second and third scores are identically zero.
        """
        x_row, y_row, x_col = _as_2d(x_row), _as_2d(y_row), _as_2d(x_col)
        if x_row.shape[1] != self.n or y_row.shape[1] != self.n or x_col.shape[1] != self.m:
            raise ValueError("input vector lengths do not match the model")
        u_pos, c_up = self.user_pos.forward(x_row)
        v_pos, c_vp = self.item_pos.forward(x_col)
        r_pos = np.einsum("ij,ij->i", u_pos, v_pos)
        if self.config.use_n2p:
            u_neg, c_un = self.user_neg.forward(y_row)
            v_neg, c_vn = self.item_neg.forward(x_col)
            r_neg = np.einsum("ij,ij->i", u_neg, v_neg)
            r_int = np.einsum("ij,jk,ik->i", u_neg, self.coupling, u_pos)
        else:
            u_neg = v_neg = np.zeros_like(u_pos)
            c_un = c_vn = None
            r_neg = np.zeros_like(r_pos)
            r_int = np.zeros_like(r_pos)
        if with_cache:
            cache = dict(u_pos=u_pos, v_pos=v_pos, u_neg=u_neg, v_neg=v_neg,
                         c_up=c_up, c_vp=c_vp, c_un=c_un, c_vn=c_vn)
            return (r_pos, r_neg, r_int), cache
        if r_pos.shape == (1,):
            return float(r_pos[0]), float(r_neg[0]), float(r_int[0])
        return r_pos, r_neg, r_int

    # ----------------------------------------------------------- phase 1

    def loss_phase1(self, x_rows, y_rows, x_cols, targets):
        """Batch-mean form of the embedding training loss: three squared
        fit terms against the same target plus L2 on the produced latents."""
        targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
        if targets.size == 0:
            raise ValueError("empty batch")
        (r_pos, r_neg, r_int), cache = self.channel_scores(
            x_rows, y_rows, x_cols, with_cache=True)
        cfg = self.config
        b = len(targets)
        fit = np.sum((targets - r_pos) ** 2)
        fit += cfg.alpha * np.sum((targets - r_neg) ** 2)
        fit += cfg.gamma * np.sum((targets - r_int) ** 2)
        reg = cfg.reg_pos * (np.sum(cache["u_pos"] ** 2) + np.sum(cache["v_pos"] ** 2))
        reg += cfg.reg_neg * (np.sum(cache["u_neg"] ** 2) + np.sum(cache["v_neg"] ** 2))
        return float((fit + reg) / b)

    def phase1_gradients(self, x_rows, y_rows, x_cols, targets):
        """Analytic gradients of the phase-1 loss; returns (loss, grads)."""
        targets = np.asarray(targets, dtype=np.float64)
        b = len(targets)
        cfg = self.config
        (r_pos, r_neg, r_int), cache = self.channel_scores(
            x_rows, y_rows, x_cols, with_cache=True)
        u_pos, v_pos = cache["u_pos"], cache["v_pos"]
        u_neg, v_neg = cache["u_neg"], cache["v_neg"]

        e_pos = (r_pos - targets)[:, None]
        e_neg = (r_neg - targets)[:, None]
        e_int = (r_int - targets)[:, None]
        loss = float((np.sum(e_pos ** 2) + cfg.alpha * np.sum(e_neg ** 2)
                      + cfg.gamma * np.sum(e_int ** 2)
                      + cfg.reg_pos * (np.sum(u_pos ** 2) + np.sum(v_pos ** 2))
                      + cfg.reg_neg * (np.sum(u_neg ** 2) + np.sum(v_neg ** 2))) / b)

        g_u_pos = (2.0 * e_pos * v_pos + 2.0 * cfg.reg_pos * u_pos) / b
        g_v_pos = (2.0 * e_pos * u_pos + 2.0 * cfg.reg_pos * v_pos) / b
        grads = {}
        if cfg.use_n2p:
            g_u_pos += (2.0 * cfg.gamma * e_int * (u_neg @ self.coupling)) / b
            g_u_neg = (2.0 * cfg.alpha * e_neg * v_neg
                       + 2.0 * cfg.gamma * e_int * (u_pos @ self.coupling.T)
                       + 2.0 * cfg.reg_neg * u_neg) / b
            g_v_neg = (2.0 * cfg.alpha * e_neg * u_neg + 2.0 * cfg.reg_neg * v_neg) / b
            grads["coupling"] = [(2.0 * cfg.gamma * (u_neg * e_int).T @ u_pos) / b]
            grads["user_neg"] = self.user_neg.backward(cache["c_un"], g_u_neg)
            grads["item_neg"] = self.item_neg.backward(cache["c_vn"], g_v_neg)
        grads["user_pos"] = self.user_pos.backward(cache["c_up"], g_u_pos)
        grads["item_pos"] = self.item_pos.backward(cache["c_vp"], g_v_pos)
        return loss, grads

    def _phase1_step(self, x_rows, y_rows, x_cols, targets):
        """One descent step; returns the batch loss before the update."""
        loss, grads = self.phase1_gradients(x_rows, y_rows, x_cols, targets)
        lr = self.config.lr
        for name in ("user_pos", "item_pos", "user_neg", "item_neg"):
            if name not in grads:
                continue
            emap = getattr(self, name)
            for w, g in zip(emap.weights, grads[name]):
                w -= lr * g
        if "coupling" in grads:
            self.coupling -= lr * grads["coupling"][0]
        return loss

    def train_phase1(self, fm: FeedbackMatrices, epochs=None):
        """Seeded mini-batch descent over the observed entries."""
        cfg = self.config
        epochs = cfg.epochs_phase1 if epochs is None else epochs
        rows, cols, targets = _observed_examples(fm)
        rng = substream(cfg.seed, "phase1_shuffle")
        pos_csc = fm.positive_csc
        for _ in range(epochs):
            order = rng.permutation(len(targets))
            losses = []
            for lo in range(0, len(order), cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                br, bc = rows[idx], cols[idx]
                losses.append(self._phase1_step(
                    fm.positive[br], fm.negative[br],
                    pos_csc[:, bc].T, targets[idx]))
            self.phase1_losses.append(float(np.mean(losses)))
        return self

    # ----------------------------------------------------------- phase 2

    def head_forward(self, score_triples):
        s = np.atleast_2d(np.asarray(score_triples, dtype=np.float64))
        z1 = s @ self.head_w1 + self.head_b1
        h = np.tanh(z1)
        z2 = h @ self.head_w2 + self.head_b2[0]
        p = 1.0 / (1.0 + np.exp(-z2))
        return np.clip(p, _CLAMP, 1.0 - _CLAMP), (s, h)

    def loss_phase2(self, score_triples, targets):
        targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
        if targets.size == 0:
            raise ValueError("empty batch")
        p, _ = self.head_forward(score_triples)
        return float(-np.mean(targets * np.log(p) + (1 - targets) * np.log(1 - p)))

    def phase2_gradients(self, score_triples, targets):
        """Analytic gradients of the head's cross-entropy; (loss, grads)."""
        targets = np.asarray(targets, dtype=np.float64)
        p, (s, h) = self.head_forward(score_triples)
        b = len(targets)
        loss = float(-np.mean(targets * np.log(p) + (1 - targets) * np.log(1 - p)))
        dz2 = (p - targets) / b
        g_w2 = h.T @ dz2
        g_b2 = np.array([dz2.sum()])
        dz1 = np.outer(dz2, self.head_w2) * (1.0 - h ** 2)
        g_w1 = s.T @ dz1
        g_b1 = dz1.sum(axis=0)
        return loss, {"head_w1": [g_w1], "head_b1": [g_b1],
                      "head_w2": [g_w2], "head_b2": [g_b2]}

    def _phase2_step(self, score_triples, targets):
        loss, grads = self.phase2_gradients(score_triples, targets)
        lr = self.config.lr
        self.head_w1 -= lr * grads["head_w1"][0]
        self.head_b1 -= lr * grads["head_b1"][0]
        self.head_w2 -= lr * grads["head_w2"][0]
        self.head_b2 -= lr * grads["head_b2"][0]
        return loss

    def train_phase2(self, fm: FeedbackMatrices, epochs=None):
        """Train the head on frozen channel scores. The embedding layers
        are never touched here; their bytes stay identical."""
        cfg = self.config
        epochs = cfg.epochs_phase2 if epochs is None else epochs
        rows, cols, targets = _observed_examples(fm)
        scores = self._scores_for_pairs(fm, rows, cols)
        rng = substream(cfg.seed, "phase2_shuffle")
        for _ in range(epochs):
            order = rng.permutation(len(targets))
            losses = []
            for lo in range(0, len(order), cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                losses.append(self._phase2_step(scores[idx], targets[idx]))
            self.phase2_losses.append(float(np.mean(losses)))
        return self

    def _scores_for_pairs(self, fm, rows, cols, chunk=8192):
        out = np.empty((len(rows), 3))
        pos_csc = fm.positive_csc
        for lo in range(0, len(rows), chunk):
            br, bc = rows[lo:lo + chunk], cols[lo:lo + chunk]
            (r_pos, r_neg, r_int), _ = self.channel_scores(
                fm.positive[br], fm.negative[br], pos_csc[:, bc].T,
                with_cache=True)
            out[lo:lo + chunk, 0] = r_pos
            out[lo:lo + chunk, 1] = r_neg
            out[lo:lo + chunk, 2] = r_int
        return out

    # -------------------------------------------------------- prediction

    def predict_warm(self, fm: FeedbackMatrices, users, items):
        """Engagement probability through the full network."""
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        scores = self._scores_for_pairs(fm, users, items)
        p, _ = self.head_forward(scores)
        return float(p[0]) if p.shape == (1,) else p

    def predict_cold(self, fm: FeedbackMatrices, mf_p2p: FactorModel,
                     mf_n2p: FactorModel, user: int, item: int):
        """Cold-user path: user latents and the coupling are approximated
        from the candidate-generation factorizations, item latents come
        from the trained maps, then the head runs as usual."""
        if mf_p2p.k != self.config.k or mf_n2p.k != self.config.k:
            raise ValueError("factorization rank must match the model rank")
        x_row = np.asarray(fm.positive.getrow(user).todense()).ravel()
        y_row = np.asarray(fm.negative.getrow(user).todense()).ravel()
        u_pos = x_row @ mf_p2p.left
        u_neg = y_row @ mf_n2p.left
        coupling = np.outer(mf_n2p.right[:, item], mf_p2p.right[:, item])
        x_col = fm.positive_csc[:, [item]].T
        v_pos = self.item_pos(x_col)[0]
        r_pos = float(u_pos @ v_pos)
        if self.config.use_n2p:
            v_neg = self.item_neg(x_col)[0]
            r_neg = float(u_neg @ v_neg)
            r_int = float(u_neg @ coupling @ u_pos)
        else:
            r_neg = r_int = 0.0
        p, _ = self.head_forward([[r_pos, r_neg, r_int]])
        return float(p[0])

    def predict(self, fm: FeedbackMatrices, user: int, item: int,
                mf_p2p=None, mf_n2p=None):
        """Warm path when the user has enough observed history, cold path
        (if approximation models are supplied) otherwise."""
        warm = fm.observed.getrow(user).nnz >= self.config.warm_threshold
        if warm or mf_p2p is None or mf_n2p is None:
            return self.predict_warm(fm, user, item)
        return self.predict_cold(fm, mf_p2p, mf_n2p, user, item)

    def predict_pairs(self, fm: FeedbackMatrices, users, items,
                      mf_p2p=None, mf_n2p=None):
        """Vectorized predict() over pair arrays, routing each pair through
        the warm or cold path exactly as the scalar form would."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        out = np.empty(len(users))
        history = np.diff(fm.observed.indptr)
        warm = (history[users] >= self.config.warm_threshold)
        if mf_p2p is None or mf_n2p is None:
            warm = np.ones(len(users), dtype=bool)
        if warm.any():
            idx = np.flatnonzero(warm)
            scores = self._scores_for_pairs(fm, users[idx], items[idx])
            out[idx], _ = self.head_forward(scores)
        cold = np.flatnonzero(~warm)
        if cold.size:
            cu, ci = users[cold], items[cold]
            u_pos = np.asarray(fm.positive[cu] @ mf_p2p.left)
            u_neg = np.asarray(fm.negative[cu] @ mf_n2p.left)
            x_cols = fm.positive_csc[:, ci].T
            v_pos = self.item_pos(x_cols)
            r_pos = np.einsum("ij,ij->i", u_pos, v_pos)
            if self.config.use_n2p:
                v_neg = self.item_neg(x_cols)
                r_neg = np.einsum("ij,ij->i", u_neg, v_neg)
                # coupling for item j is the outer product of the two
                # factorizations' item columns, so the bilinear form splits
                r_int = (np.einsum("ij,ji->i", u_neg, mf_n2p.right[:, ci])
                         * np.einsum("ij,ji->i", u_pos, mf_p2p.right[:, ci]))
            else:
                r_neg = np.zeros_like(r_pos)
                r_int = np.zeros_like(r_pos)
            scores = np.stack([r_pos, r_neg, r_int], axis=1)
            out[cold], _ = self.head_forward(scores)
        return out

    # ------------------------------------------------------------- misc

    def embedding_fingerprint(self) -> str:
        """Hash of everything below the head; phase 2 must not change it."""
        digest = hashlib.sha256()
        for emap in (self.user_pos, self.item_pos, self.user_neg, self.item_neg):
            for w in emap.weights:
                digest.update(w.tobytes())
        digest.update(self.coupling.tobytes())
        return digest.hexdigest()

    def parameter_groups(self):
        groups = {
            "user_pos": self.user_pos.weights,
            "item_pos": self.item_pos.weights,
            "head_w1": [self.head_w1],
            "head_b1": [self.head_b1],
            "head_w2": [self.head_w2],
            "head_b2": [self.head_b2],
        }
        if self.config.use_n2p:
            groups["user_neg"] = self.user_neg.weights
            groups["item_neg"] = self.item_neg.weights
            groups["coupling"] = [self.coupling]
        return groups


def _observed_examples(fm: FeedbackMatrices):
    coo = fm.observed.tocoo()
    rows = coo.row.astype(np.int64)
    cols = coo.col.astype(np.int64)
    targets = np.asarray(fm.positive[rows, cols]).ravel().astype(np.float64)
    return rows, cols, targets


def save_ranking_model(model: RankingModel, path) -> None:
    """Checkpoint: factor-model header layout extended with one sized
    section per weight array, plus a plain-text hyperparameter sidecar."""
    from pathlib import Path
    path = Path(path)
    cfg = model.config
    arrays = []
    for emap in (model.user_pos, model.item_pos, model.user_neg, model.item_neg):
        arrays.extend(emap.weights)
    arrays.append(model.coupling)
    arrays.extend([model.head_w1, model.head_b1.reshape(1, -1),
                   model.head_w2.reshape(1, -1), model.head_b2.reshape(1, 1)])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, model.m, model.n, cfg.k))
        fh.write(struct.pack("<H", len(arrays)))
        for arr in arrays:
            arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
            fh.write(struct.pack("<II", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())
    with open(path.with_suffix(path.suffix + ".meta"), "w") as fh:
        for key, val in vars(cfg).items():
            fh.write(f"{key}={val}\n")


def load_ranking_model(path) -> RankingModel:
    from pathlib import Path
    path = Path(path)
    meta = {}
    for line in path.with_suffix(path.suffix + ".meta").read_text().splitlines():
        key, _, val = line.partition("=")
        meta[key] = val

    def conv(key, cast, default):
        raw = meta.get(key)
        if raw in (None, "None"):
            return default
        if cast is bool:
            return raw == "True"
        return cast(raw)

    with open(path, "rb") as fh:
        magic, version, m, n, k = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a ranking model file")
        if version != 1:
            raise ValueError(f"{path}: unsupported version {version}")
        (count,) = struct.unpack("<H", fh.read(2))
        arrays = []
        for _ in range(count):
            r, c = struct.unpack("<II", fh.read(8))
            arrays.append(np.frombuffer(fh.read(8 * r * c), dtype=np.float64)
                          .reshape(r, c).copy())
    hidden = conv("hidden", int, None)
    cfg = RankingConfig(
        k=k,
        alpha=conv("alpha", float, 1.0), gamma=conv("gamma", float, 1.0),
        reg_pos=conv("reg_pos", float, 0.01), reg_neg=conv("reg_neg", float, 0.01),
        lr=conv("lr", float, 0.05), batch_size=conv("batch_size", int, 256),
        epochs_phase1=conv("epochs_phase1", int, 30),
        epochs_phase2=conv("epochs_phase2", int, 40),
        hidden=hidden, head_hidden=conv("head_hidden", int, 8),
        use_n2p=conv("use_n2p", bool, True),
        warm_threshold=conv("warm_threshold", int, 5),
        seed=conv("seed", int, 0),
    )
    model = RankingModel(m, n, cfg)
    per_map = 1 if hidden is None else 2
    pos = 0
    for emap in (model.user_pos, model.item_pos, model.user_neg, model.item_neg):
        emap.weights = arrays[pos:pos + per_map]
        pos += per_map
    model.coupling = arrays[pos]
    model.head_w1 = arrays[pos + 1]
    model.head_b1 = arrays[pos + 2].ravel()
    model.head_w2 = arrays[pos + 3].ravel()
    model.head_b2 = arrays[pos + 4].ravel().copy()
    return model
