"""Exercises the Python bindings: generate, train, embed, build a database, match."""

import math
import tempfile
from pathlib import Path

import phase_manifold_py as pm


def main() -> None:
    a = [0.3, -1.0, 2.0, 0.5]
    assert pm.psi(a, 0.0) == a[2:]
    assert all(abs(x - y) < 1e-12 for x, y in zip(pm.psi(a, 0.25), a[:2]))

    t = [(i - 30) / 60.0 for i in range(61)]
    cos = [math.cos(2 * math.pi * 1.5 * ti) for ti in t]
    assert abs(pm.phase_from_signal(cos, 1.5, t)) < 1e-6

    motions = []
    for k, cls in enumerate(["idle", "walk", "run"]):
        m, truth = pm.generate("biped", cls, duration=4.0, seed=k)
        assert len(truth["phase"]) == len(m)
        assert set(truth["class"]) == {cls}
        motions.append(m)

    model, loss = pm.train([("biped", motions)], steps=30, batch=8, codebook_size=4, embedding_dim=4, hidden=8, seed=1)
    assert len(loss) == 30 and all(math.isfinite(v) for v in loss)
    assert model.datasets == ["biped"] and len(model.codebook()) == 4

    query, _ = pm.generate("biped", "walk", frequency=2.0, duration=3.0, seed=9)
    track = model.embed(query)
    assert len(track) == len(query)
    assert all(-0.5 < p <= 0.5 for p in track.phases())

    db = pm.Database.build(model, motions)
    out, steps = db.match_track(track, query_motion=query)
    assert len(out) > 0 and steps and steps[0]["query_start"] == 0
    seq, start, length, cost, cycle = db.retrieve(0, 1.5)
    assert length == len(cycle)

    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        model.save(d / "m.ckpt")
        track.save(d / "q.track")
        db.save(d / "db.bin")
        query.save(d / "q.motion")
        again = pm.Model.load(d / "m.ckpt").embed(pm.Motion.load(d / "q.motion"))
        assert again.phases() == pm.Track.load(d / "q.track").phases()
        assert pm.Database.load(d / "db.bin").framerate == db.framerate
        try:
            pm.Motion.load(d / "missing.motion")
        except OSError:
            pass
        else:
            raise AssertionError("missing file should raise")

    print("smoke test passed")


if __name__ == "__main__":
    main()
