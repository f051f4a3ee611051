"""Smoke test for the flowsense extension module. Run with pytest after building it."""

import math

import flowsense


def triangle():
    return flowsense.FlowNetwork(3, [(0, 1), (1, 2), (2, 0)], name="triangle")


def test_network_basics():
    net = triangle()
    assert net.node_count == 3
    assert net.edge_count == 3
    assert net.cycle_rank == 1
    assert net.edges() == [(0, 1), (1, 2), (2, 0)]
    assert net.divergence([1.0, 1.0, 1.0]) == [0.0, 0.0, 0.0]


def test_prediction_fills_a_circulation():
    pred = flowsense.predict(triangle(), [0], [5.0])
    assert all(math.isclose(v, 5.0, rel_tol=1e-9) for v in pred)


def test_placement_and_scoring():
    net, flow = flowsense.FlowNetwork.grid(4, 4, seed=1)
    plan = flowsense.place(net, flow, 0.1)
    assert plan.algorithm == "lazy_recursive"
    assert len(plan.sensors) == round(0.1 * net.edge_count)
    assert plan.final_error == plan.error_trace[-1]
    lazy = flowsense.place(net, flow, len(plan.sensors), algorithm="lazy_greedy")
    assert lazy.sensors == plan.sensors

    observed = [flow[s] for s in plan.sensors]
    pred = flowsense.predict(net, plan.sensors, observed)
    report = flowsense.score(pred, flow)
    assert report["corr"] is not None and -1.0 <= report["corr"] <= 1.0
    assert report["mse"] >= 0.0

    perfect = flowsense.score(flow, flow)
    assert perfect["mse"] == 0.0 and math.isclose(perfect["corr"], 1.0)


def test_flows_and_bound():
    net, flow = flowsense.FlowNetwork.grid(3, 3, seed=2)
    synth = flowsense.synthetic_flow(net)
    assert len(synth) == net.edge_count
    assert flowsense.add_noise(flow, 0.0) == flow
    noisy = flowsense.add_noise(flow, 1.0, seed=3)
    assert noisy != flow
    rrqr = flowsense.place(net, flow, net.cycle_rank, algorithm="rrqr")
    assert flowsense.rrqr_bound(net, rrqr.sensors, flow) > 0.0


def test_tntp_round_trip():
    net, _ = flowsense.FlowNetwork.grid(2, 3)
    again = flowsense.FlowNetwork.from_tntp(net.to_tntp(), name="again")
    assert again.edges() == net.edges()


def test_errors_become_value_errors():
    try:
        flowsense.FlowNetwork(2, [(0, 5)])
    except ValueError as e:
        assert "node 5" in str(e)
    else:
        raise AssertionError("expected ValueError")
    try:
        flowsense.place(triangle(), [1.0, 1.0, 1.0], 1, algorithm="annealing")
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")
