"""Full training runs: epoch loop, metrics CSV, checkpoints at cycle ends."""

from __future__ import annotations

import logging
import os
import time
from pathlib import Path

from .checkpoint import save_checkpoint
from .config import RunConfig, dump_run_config
from .model import build_network
from .train import MetricsRow, OptimizerState, cycle_boundaries, train_epoch

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run_training(cfg: RunConfig, train_data, test_data, out_dir, wall_time=True, net=None):
    """Train from an MSRA init (seeded by ``cfg.train.seed``); returns (net, rows).

    Writes ``metrics.csv`` after every epoch, ``epoch_<E>.swgd`` at every
    restart-cycle boundary, and ``final.swgd`` at the end.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc = cfg.train
    if net is None:
        net = build_network(cfg.network, seed=tc.seed)
    _write_atomic(out / "run.cfg", dump_run_config(cfg))
    state = OptimizerState()
    boundaries = set(cycle_boundaries(tc))
    rows: list[MetricsRow] = []
    lines = [MetricsRow.HEADER]
    clock = time.perf_counter if wall_time else None
    for epoch in range(tc.total_epochs):
        row = train_epoch(net, train_data, tc, state, epoch, test_data, clock=clock)
        rows.append(row)
        lines.append(row.to_csv())
        _write_atomic(out / METRICS_FILE, "\n".join(lines) + "\n")
        log.info("epoch %d lr %.4f loss %.4f acc %.4f test_acc %.4f",
                 epoch, row.lr, row.train_loss, row.train_acc, row.test_acc)
        if epoch + 1 in boundaries:
            save_checkpoint(net, out / f"epoch_{epoch + 1}.swgd")
    save_checkpoint(net, out / "final.swgd")
    return net, rows
