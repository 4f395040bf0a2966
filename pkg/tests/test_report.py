"""Figure rendering writes non-empty image files."""

from ptkit.corpus.filtering import FilterStats
from ptkit.planning import WsdSchedule, builtin_cpt_sources, plan_mix
from ptkit.report import (
    save_filter_figure,
    save_loss_figure,
    save_mix_figure,
    save_schedule_figure,
)


def test_schedule_figure(tmp_path):
    path = save_schedule_figure(WsdSchedule(total=1000.0), tmp_path / "schedule.png")
    assert path.exists() and path.stat().st_size > 1000


def test_mix_figure(tmp_path):
    plan = plan_mix(
        builtin_cpt_sources(), {"SEA": 0.55, "EN": 0.25, "CODE": 0.20}, 200_000_000_000
    )
    path = save_mix_figure(plan, tmp_path / "mix.png")
    assert path.exists() and path.stat().st_size > 1000


def test_filter_figure(tmp_path):
    stats = FilterStats(total=10, retained=6)
    stats.dropped["language"] = 3
    stats.dropped["malformed"] = 1
    path = save_filter_figure(stats, tmp_path / "filter.png")
    assert path.exists() and path.stat().st_size > 1000


def test_loss_figure(tmp_path):
    losses = [0.1 * i for i in range(50)]
    path = save_loss_figure(losses, tmp_path / "loss.png")
    assert path.exists() and path.stat().st_size > 1000


def test_cli_figure_flags(tmp_path):
    from ptkit.cli import run

    fig = tmp_path / "sched.png"
    assert run(["schedule", "--total", "1000", "--at", "500", "--figure", str(fig)]) == 0
    assert fig.exists() and fig.stat().st_size > 1000
