import pytest

from crowddrp.instances import Instance, Request, VehicleSpec, generate_instance
from crowddrp.mdp import CostConfig, Simulator
from crowddrp.policies import DracePolicy, MyopicAlnsPolicy, AlnsConfig
from crowddrp.traveltime import default_model


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def nm_low():
    return generate_instance("nm", "low", 7)


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels(model):
    """Compile the jit kernels once so timed tests measure runtime, not
    compilation."""
    depot = (10.0, 5.0)
    req = Request(0, origin=(11.0, 5.0), destination=(11.0, 6.0),
                  arrival=0.0, ready=5.0, deadline=400.0)
    veh = VehicleSpec(0, "dedicated", 0.0, 1200.0, depot, depot)
    crowd = VehicleSpec(1, "crowdshipper", 1.0, 120.0, (9.0, 5.0),
                        (9.0, 6.0))
    inst = Instance(cls="nm", level="low", seed=0, horizon=600.0,
                    hard_end=1200.0, depot=depot, requests=[req],
                    fleet=[veh, crowd])
    Simulator(inst, model=model).run(DracePolicy(), seed=0)
    Simulator(inst, model=model).run(
        MyopicAlnsPolicy(alns=AlnsConfig(iteration_limit=2)), seed=0)


def micro_instance(requests, fleet, horizon=600.0, hard_end=1200.0):
    inst = Instance(cls="nm", level="low", seed=0, horizon=horizon,
                    hard_end=hard_end, depot=(10.0, 5.0),
                    requests=list(requests), fleet=list(fleet))
    inst.validate()
    return inst
