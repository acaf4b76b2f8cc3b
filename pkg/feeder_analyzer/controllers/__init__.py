from feeder_analyzer.controllers.inverter_functions import (
    apply_kva_limit,
    evaluate_curve,
    pv_available_power,
    step_constant_pf,
    step_function,
    step_volt_var,
    step_volt_watt
)

from feeder_analyzer.controllers.devices import (
    capacitor_decide,
    check_voltage_limits,
    regulator_decide
)
