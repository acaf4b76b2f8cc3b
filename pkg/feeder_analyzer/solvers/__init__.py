from feeder_analyzer.solvers.network import build_network, downstream_order
from feeder_analyzer.solvers.power_flow import build_injections, solve, total_losses
from feeder_analyzer.solvers.harmonics import harmonic_solution, thd
