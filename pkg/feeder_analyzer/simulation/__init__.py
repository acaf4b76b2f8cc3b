from feeder_analyzer.simulation.qsts import run_series, run_timestep, sweep_functions
