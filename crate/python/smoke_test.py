"""Quick end-to-end check of the Python bindings."""
import json
import math
import pathlib

import bilevel

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "data" / "configs"


def main():
    assert bilevel.parse_expr("2*eps+1") == "((2 * eps) + 1)"
    assert bilevel.evaluate_expr("E*eps + H*eps^3", {"eps": 0.5, "E": 2.0, "H": 8.0}) == 2.0
    try:
        bilevel.evaluate_expr("log(eps)", {"eps": -1.0})
        raise AssertionError("expected a domain error")
    except bilevel.BilevelError:
        pass

    assert bilevel.update_temperature(0.9, 100.0, 50.0) == 0.9 * (1 / 1.5)
    assert bilevel.update_temperature(0.8, 100.0, 150.0) == 1.0

    square = [[0, 0], [0, 1], [1, 1], [1, 0]]
    assert bilevel.tour_length(square, [0, 1, 2, 3]) == 4.0
    tour, length = bilevel.optimal_tour(square)
    assert length == 4.0 and sorted(tour) == [0, 1, 2, 3]

    w = [[1.0, 0.0], [0.0, 1.0]]
    w1 = bilevel.solve_edit(w, [], [([1.0, 0.0], [3.0, -1.0])], 1e-9)
    assert abs(w1[0][0] - 3.0) < 1e-6 and abs(w1[1][0] + 1.0) < 1e-6

    assert bilevel.summarize([0.0, 2.0]) == (1.0, 1.0, 2, 0)
    assert bilevel.score_map(None, 5.0) == 0.0

    cfg = bilevel.RunConfig.load(str(CONFIGS / "linear.toml"))
    cfg.seeds = [0, 1]
    records = bilevel.sweep(cfg)
    assert [r.seed for r in records] == [0, 1]
    assert all(r.solved and r.final_objective <= 1e-9 for r in records)
    assert json.loads(records[0].to_json())["seed"] == 0

    tsp = bilevel.RunConfig('[task]\nkind = "tsp"\nnodes = 6\n[proposer]\nkind = "heuristic_tsp"\n')
    tsp.max_iterations = 5
    arms = {r.arm for r in bilevel.ablate(tsp)}
    assert arms == {"gso", "gso_wo_dynamic", "gso_wo_edit", "gso_wo_both"}

    km = bilevel.KnowledgeModel(seed=1)
    edited, recall = km.edit([("tour_a", "has_length", "12.5")])
    assert edited == 1 and recall == 1.0 and km.knows("tour_a", "has_length", "12.5")
    assert not math.isnan(float(km.layer))
    print("python smoke test passed")


if __name__ == "__main__":
    main()
