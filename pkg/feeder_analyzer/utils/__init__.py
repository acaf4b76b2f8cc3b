from feeder_analyzer.utils.helpers import (
    configure_logging,
    create_directory_if_not_exists,
    generate_run_id,
    get_background_task_status,
    get_logger,
    set_background_task_status,
)

__all__ = [
    "configure_logging",
    "create_directory_if_not_exists",
    "generate_run_id",
    "get_background_task_status",
    "get_logger",
    "set_background_task_status",
]
