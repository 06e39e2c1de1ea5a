"""Parameter container and the per-step training graph.

Level-0 node embeddings are Gaussian tables; per draw, the sampled
embeddings propagate one or more hops over the user-bundle and user-item
graphs, bundle item-view vectors come from average pooling over members,
and the four loss components are assembled per draw and averaged.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .config import RunConfig
from .data import InteractionDataset, TrainBatch
from .gaussian import GaussianEmbeddingTable, NoiseDraw, init_table, sample
from .graph import (BipartiteGraph, build_graph, drop_edges, mean_pool_matrix,
                    propagate_layers)
from .prototypes import PrototypeBank, SinkhornConfig, prototype_step

# disjoint seed-stream tags
_INIT_TAG = 1
_NOISE_TAG = 2
_DROPOUT_TAG = 4
_EVAL_NOISE_TAG = 5

_TABLE_INDEX = {"user": 0, "bundle": 1, "item": 2, "user_item_view": 3}


class GPCLModel:
    """All trainable state plus graph construction for one dataset."""

    def __init__(self, ds: InteractionDataset, cfg: RunConfig):
        self.ds = ds
        self.cfg = cfg
        counts = ds.counts
        dim = cfg.effective_dim
        seed = cfg.trainer.seed

        self.ub = build_graph(ds.ub_train, counts)
        self.ui = build_graph(ds.ui, counts)
        self.bi = build_graph(ds.bi, counts)
        self._pool = mean_pool_matrix(self.bi)

        rng = np.random.default_rng(np.random.SeedSequence([seed, _INIT_TAG]))
        mc = cfg.model
        self.tables: dict[str, GaussianEmbeddingTable] = {
            "user": init_table(counts.num_users, dim, mc.mean_scale,
                               mc.raw_var_init, rng, "user"),
            "bundle": init_table(counts.num_bundles, dim, mc.mean_scale,
                                 mc.raw_var_init, rng, "bundle"),
            "item": init_table(counts.num_items, dim, mc.mean_scale,
                               mc.raw_var_init, rng, "item"),
        }
        if not mc.share_level0:
            self.tables["user_item_view"] = init_table(
                counts.num_users, dim, mc.mean_scale, mc.raw_var_init, rng,
                "user_item_view")
        self.prototypes = PrototypeBank(
            ad.parameter(rng.normal(0.0, mc.mean_scale,
                                    (mc.num_prototypes_user, dim)), "prototypes.user"),
            ad.parameter(rng.normal(0.0, mc.mean_scale,
                                    (mc.num_prototypes_bundle, dim)), "prototypes.bundle"),
        )
        self._sinkhorn = SinkhornConfig(cfg.ot.entropy_reg, cfg.ot.max_iters, cfg.ot.tol)
        self._assign_cache: dict[int, tuple] = {}

    # -- parameters ------------------------------------------------------

    def parameters(self) -> dict[str, ad.Tensor]:
        out: dict[str, ad.Tensor] = {}
        for table in self.tables.values():
            for p in table.parameters():
                out[p.name] = p
        for p in self.prototypes.parameters():
            out[p.name] = p
        return out

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(values))
        if missing:
            raise KeyError(f"missing parameters: {missing}")
        for name, param in params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != param.value.shape:
                raise ValueError(
                    f"parameter {name} has shape {arr.shape}, expected {param.value.shape}")
            param.value = arr.copy()

    def export_values(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.parameters().items()}

    # -- sampling and propagation ----------------------------------------

    @property
    def num_samples(self) -> int:
        return 1 if self.cfg.model.disable_gaussian else self.cfg.loss.num_samples

    def _noise_key(self, tag: int, step: int, t: int, table: str) -> tuple[int, ...]:
        return (self.cfg.trainer.seed, tag, step, t, _TABLE_INDEX[table])

    def level0(self, step: int, t: int, tag: int = _NOISE_TAG) -> dict[str, ad.Tensor]:
        """One sampled copy of every level-0 table (means when Gaussian is off)."""
        out: dict[str, ad.Tensor] = {}
        for name, table in self.tables.items():
            if self.cfg.model.disable_gaussian:
                out[name] = table.mean
            else:
                noise = NoiseDraw.from_key(table.rows, table.dim,
                                           self._noise_key(tag, step, t, name))
                out[name] = sample(table, noise)
        if self.cfg.model.share_level0:
            out["user_item_view"] = out["user"]
        return out

    def mean_level0(self) -> dict[str, np.ndarray]:
        out = {name: table.mean.value for name, table in self.tables.items()}
        if self.cfg.model.share_level0:
            out["user_item_view"] = out["user"]
        return out

    def training_graphs(self, step: int):
        p = self.cfg.model.edge_dropout
        if p == 0.0:
            return self.ub, self.ui, self.bi, self._pool
        rng = np.random.default_rng(
            np.random.SeedSequence([self.cfg.trainer.seed, _DROPOUT_TAG, step]))
        ub = drop_edges(self.ub, p, rng)
        ui = drop_edges(self.ui, p, rng)
        bi = drop_edges(self.bi, p, rng)
        return ub, ui, bi, mean_pool_matrix(bi)

    def compute_views(self, level0, graphs=None) -> obj.ViewEmbeddings:
        """Propagate one set of level-0 embeddings into the four view matrices."""
        ub, ui, _, pool = graphs if graphs is not None else (
            self.ub, self.ui, self.bi, self._pool)
        mc = self.cfg.model
        user_b, bundle_b = propagate_layers(ub, level0["user"], level0["bundle"],
                                            mc.layers, mc.combine)
        user_i, item_i = propagate_layers(ui, level0["user_item_view"], level0["item"],
                                          mc.layers, mc.combine)
        bundle_i = ad.spmm(pool, item_i)
        return obj.ViewEmbeddings(user_b, bundle_b, user_i, bundle_i)

    def mean_views(self) -> obj.ViewEmbeddings:
        """Deterministic views from the mean embeddings (numpy, no graph)."""
        return self.compute_views(self.mean_level0())

    def sampled_views(self, t: int, seed_step: int = 0) -> obj.ViewEmbeddings:
        """Views from one reparameterized draw on an evaluation noise stream."""
        level0 = self.level0(seed_step, t, tag=_EVAL_NOISE_TAG)
        values = {name: (v.value if ad.is_tensor(v) else v) for name, v in level0.items()}
        return self.compute_views(values)

    # -- losses ------------------------------------------------------------

    def _proto_rows(self, level0, views, batch: TrainBatch):
        mc = self.cfg.model
        if mc.proto_input == "level0":
            user_emb, bundle_emb = level0["user"], level0["bundle"]
        elif mc.proto_input == "bundle_view":
            user_emb, bundle_emb = views.user_bundle_view, views.bundle_bundle_view
        else:
            user_emb, bundle_emb = views.user_item_view, views.bundle_item_view
        if mc.proto_scope == "batch":
            users = np.unique(batch.triples[:, 0])
            bundles = np.unique(batch.triples[:, 1])
            user_emb = ad.gather_rows(user_emb, users)
            bundle_emb = ad.gather_rows(bundle_emb, bundles)
        return user_emb, bundle_emb

    def sample_loss(self, batch: TrainBatch, step: int, t: int,
                    graphs=None, frozen_assignments=None):
        """Loss parts for one Gaussian draw; returns (parts, assignments)."""
        cfg = self.cfg
        level0 = self.level0(step, t)
        views = self.compute_views(level0, graphs)
        users = batch.triples[:, 0]
        pos = batch.triples[:, 1]
        neg = batch.triples[:, 2]

        l_bpr = obj.bpr_loss(obj.pairwise_scores(views, users, pos),
                             obj.pairwise_scores(views, users, neg))
        l_cl = obj.cross_view_infonce(users, pos, views, cfg.loss.temperature,
                                      cfg.model.cl_negatives)
        if cfg.model.disable_proto:
            parts = obj.LossBreakdown(l_bpr, l_cl, 0.0, 0.0)
            return parts, None

        assignments = frozen_assignments
        if assignments is None and cfg.ot.refresh_every > 1 \
                and cfg.model.proto_scope == "full" \
                and step % cfg.ot.refresh_every != 0:
            assignments = self._assign_cache.get(t)
        user_emb, bundle_emb = self._proto_rows(level0, views, batch)
        l_proto, l_ot, assignments = prototype_step(
            user_emb, bundle_emb, self.prototypes, self._sinkhorn,
            cfg.loss.temperature, assignments)
        self._assign_cache[t] = assignments
        parts = obj.LossBreakdown(l_bpr, l_cl, l_proto, l_ot)
        return parts, assignments

    def step_loss(self, batch: TrainBatch, step: int, frozen_assignments=None):
        """Averaged total over the draw count.

        Returns ``(total_tensor, breakdown_floats, per_draw_assignments)``;
        ``frozen_assignments`` (one entry per draw) short-circuits the
        balanced-assignment solve so finite-difference probes see the same
        constants the gradient pass saw.
        """
        weights = obj.LossWeights(self.cfg.loss.gamma_cl, self.cfg.loss.gamma_pcl,
                                  self.cfg.loss.gamma_ot, self.cfg.loss.temperature,
                                  self.num_samples)
        graphs = self.training_graphs(step)
        per_sample = []
        assignments_out = []
        for t in range(self.num_samples):
            frozen = None if frozen_assignments is None else frozen_assignments[t]
            parts, assigns = self.sample_loss(batch, step, t, graphs, frozen)
            parts.total = obj.weighted_total(parts, weights)
            per_sample.append(parts)
            assignments_out.append(assigns)
        total = obj.total_loss(per_sample, weights)
        mean_parts = obj.LossBreakdown(
            *[float(np.mean([_value(getattr(p, f)) for p in per_sample]))
              for f in ("l_bpr", "l_cl", "l_proto", "l_ot", "total")])
        return total, mean_parts, assignments_out


def _value(x) -> float:
    return float(x.value) if ad.is_tensor(x) else float(x)
