from bubblechan import bubbledyn as bd
from bubblechan import fluidmodel as fm
from bubblechan import transport as tp


def make_scenario(**kw):
    """Plug-flow baseline: U=0.1 m/s, detector at 0.1 m, loop 1 m, no
    gravity, monodisperse 2.5 um bubbles, dt=1e-3 s."""
    base = dict(
        medium=fm.WATER,
        geometry=fm.LoopGeometry(
            pipe_radius=0.005,
            detector_distance=0.1,
            loop_length=1.0,
            gravity=(0.0, 0.0, 0.0),
        ),
        flow=fm.FlowField(fm.ProfileKind.PLUG, 0.1),
        species=bd.BubbleSpecies(gas_density=6.6),
        injection=tp.InjectionSchedule(events=((0.0, 100),)),
        detector=tp.DetectorSpec(axial_position=0.1),
        recirculation=tp.RecirculationSpec(
            enabled=True, reservoir_delay=0.0, remix_radial=False
        ),
        integrator=bd.IntegratorConfig(dt=1e-3),
        duration=1.5,
    )
    base.update(kw)
    return tp.Scenario(**base)


def arrivals_by_particle(result):
    out = {}
    for pid, t, p in zip(
        result.arrival_ids, result.arrival_times, result.arrival_passes
    ):
        out.setdefault(int(pid), []).append((int(p), float(t)))
    return out
