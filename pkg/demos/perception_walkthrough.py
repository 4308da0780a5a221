"""End-to-end walkthrough: render a scene, watch the stripe, act on it.

Calibrates the pipeline on empty frames, drops two boxes onto the floor,
and walks one frame through every stage: cutoff trigger, gap measurement,
height readings, and the resulting motion commands.  Run it directly:

    python demos/perception_walkthrough.py
"""

from dataclasses import replace

from nearfield import (
    DEFAULT_SETUP,
    Frame,
    Obstacle,
    PipelineConfig,
    SceneSpec,
    StripePipeline,
    decide,
    make_calibration,
    perception_to_events,
    render,
    render_sequence,
)
from nearfield.stripe import event_to_dict


def box_on_stripe(width_mm, y_mm, height_mm, depth_mm=80.0, lead_mm=40.0):
    """Place a box so the laser sheet lands on its top face."""
    x_top = DEFAULT_SETUP.d_light_mm * (1.0 - height_mm / DEFAULT_SETUP.h_light_mm)
    return Obstacle(x_mm=x_top - lead_mm, y_mm=y_mm, width_mm=width_mm,
                    depth_mm=depth_mm, height_mm=height_mm)


def main():
    config = PipelineConfig()
    pipeline = StripePipeline(make_calibration(DEFAULT_SETUP, config), config)

    empty = SceneSpec()
    pipeline.calibrate([f for f, _ in render_sequence(empty, 3, seed=0)])
    print(f"calibrated: noise floor {pipeline.noise_floor_mm:.2f} mm, "
          f"{int(pipeline.baseline.present.sum())} covered columns")

    scene = replace(empty, obstacles=(
        box_on_stripe(90.0, -120.0, 30.0),
        box_on_stripe(70.0, 60.0, 80.0),
    ))
    pixels, truth = render(scene, DEFAULT_SETUP, seed=7)
    print(f"\nscene: {len(scene.obstacles)} boxes, "
          f"true heights {[b.height_mm for b in scene.obstacles]} mm")

    # A static scene repeated three times fills the temporal voting window.
    for k in range(3):
        event = pipeline.process(Frame(pixels=pixels, ts_ms=20 * k))

    print(f"\ntriggered: {event.triggered}   max gap: {event.max_gap_mm:.1f} mm")
    for gap in event.gaps:
        print(f"  gap [{gap.start_mm:7.1f}, {gap.end_mm:7.1f}] mm "
              f"({gap.length_mm:.1f} mm wide)")
    valid = [r for r in event.heights if r.valid]
    if valid:
        lo = min(r.h_obj_mm for r in valid)
        hi = max(r.h_obj_mm for r in valid)
        print(f"heights: {len(valid)} readings, {lo:.1f} to {hi:.1f} mm")

    print("\ndecisions (zone B):")
    events = perception_to_events(event_to_dict(event), zone="B")
    seen = set()
    for det in events:
        action = decide(det)
        key = (det.tier, None if det.height_mm is None else round(det.height_mm))
        if key in seen:
            continue
        seen.add(key)
        h = "unknown" if det.height_mm is None else f"{det.height_mm:.1f} mm"
        size = det.size_class()
        print(f"  tier {det.tier}, height {h}, size "
              f"{size.name if size else 'unknown'} -> {action.name}")


if __name__ == "__main__":
    main()
