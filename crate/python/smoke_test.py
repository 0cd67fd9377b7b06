"""Smoke test for the vipnet Python extension."""

import math
import sys
import tempfile

import vipnet


def main():
    clips = vipnet.synth(12, seed=4, profile="mixed", split=(1.0, 0.0, 0.0))
    assert len(clips) == 12
    c = clips[0]
    print(c)
    assert c.vip_person_id in c.person_ids

    spatial = vipnet.synth(10, seed=2, profile="spatial")
    assert all(vipnet.baseline(x, "centrality")[0] == x.vip_person_id for x in spatial)

    model, log = vipnet.train(clips, dim=16, epochs=2, lr=1e-3, batch_size=4)
    assert len(log) == 2 and all(math.isfinite(m["loss"]["total"]) for m in log)

    r = model.predict(c)
    assert abs(sum(r["probabilities"]) - 1.0) < 1e-9
    assert r["ranked_ids"][0] == r["vip_id"]

    why = model.explain(c, mode="guided")
    assert why["guidance_mode"] == "guided" and why["refined_text"]

    with tempfile.TemporaryDirectory() as d:
        model.save(d + "/ck")
        again = vipnet.Model.load(d + "/ck")
        assert again.predict(c)["probabilities"] == r["probabilities"]

    report = vipnet.evaluate(model, clips)
    assert report["count"] == 12 and report["rank1"] <= report["rank2"] <= report["rank3"]

    g = vipnet.gradcheck(3)
    assert g["max_rel_error"] < 1e-4, g["max_rel_error"]
    print("ok: rank1 %.3f, max gradient error %.2e" % (report["rank1"], g["max_rel_error"]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
