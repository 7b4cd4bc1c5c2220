import numpy as np

from iamp import plotting
from iamp.accel_ar import profile_to_distributions
from iamp.corridors import enumerate_corridors
from iamp.fusion import render_grid
from iamp.markov import Discretization, initial_distribution
from iamp.scenarios import straight_map


def _is_svg(path):
    text = path.read_text()
    return text.lstrip().startswith("<?xml") and "<svg" in text


def test_motion_grid_svg(tmp_path):
    disc = Discretization()
    lmap = straight_map()
    c = enumerate_corridors(lmap, (10.0, 0.0, 0.0), 10.0, vehicle_id=1, first_id=100)[0]
    grids = render_grid(1, [(c, 1.0, [initial_distribution(disc, 10.0)])], disc)
    gt = {1: np.column_stack([np.linspace(10, 50, 11), np.zeros(11)])}
    path = plotting.plot_motion_grid(lmap, grids, gt, tmp_path / "g.svg", title="grid")
    assert _is_svg(path)
    # fixed hash salt and no date: identical bytes on re-render
    again = plotting.plot_motion_grid(lmap, grids, gt, tmp_path / "g2.svg", title="grid")
    assert path.read_bytes() == again.read_bytes()


def test_accel_and_summary_svg(tmp_path):
    disc = Discretization()
    dist = profile_to_distributions(np.linspace(-2, 1, 40), disc)
    assert _is_svg(plotting.plot_accel_distributions(dist, disc.accel_edges, tmp_path / "a.svg", title="a"))
    summary = {"baseline": {"mADE": 1.2, "mFDE": 2.0, "time_per_step": 0.4},
               "hybrid": {"mADE": 0.8, "mFDE": 1.5, "time_per_step": 0.2}}
    assert _is_svg(plotting.plot_summary(summary, tmp_path / "sub" / "s.svg"))


def test_cli_svg_report(tmp_path):
    from iamp.cli import main
    from iamp.markov import compute_transition_matrices

    compute_transition_matrices().save(tmp_path / "m.bin")
    assert main(["predict", "--scenario", "straight", "--repeats", "1", "--matrices", str(tmp_path / "m.bin"),
                 "--svg", "-o", str(tmp_path / "rep")]) == 0
    assert _is_svg(tmp_path / "rep" / "summary.svg")
    assert _is_svg(tmp_path / "rep" / "grid_baseline.svg")
