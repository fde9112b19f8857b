from lapstrat._core import (
    CleanedLapSet,
    LapResult,
    PipelineError,
    ReferenceProfile,
    RejectedLap,
    RunConfig,
    SectorTimeRecord,
    StageResult,
    StrategyBudgets,
    TrackGeometry,
    VehicleParams,
    __version__,
    clean_laps,
    cmd_evaluate,
    cmd_ingest,
    cmd_optimize,
    cmd_simulate,
    cmd_stats,
    cmd_stint,
    cmd_synth,
    config_from_string,
    config_to_string,
    dbscan,
    default_params,
    geometry_to_string,
    lethargy_sector_times,
    load_config,
    load_geometry,
    load_params,
    load_profile,
    make_preset,
    parse_sector_times,
    parse_sector_times_string,
    reconstruct_speed,
    run_stages,
    sector_times_to_string,
    simulate_lap,
)

__all__ = [
    "CleanedLapSet",
    "LapResult",
    "PipelineError",
    "ReferenceProfile",
    "RejectedLap",
    "RunConfig",
    "SectorTimeRecord",
    "StageResult",
    "StrategyBudgets",
    "TrackGeometry",
    "VehicleParams",
    "__version__",
    "clean_laps",
    "cmd_evaluate",
    "cmd_ingest",
    "cmd_optimize",
    "cmd_simulate",
    "cmd_stats",
    "cmd_stint",
    "cmd_synth",
    "config_from_string",
    "config_to_string",
    "dbscan",
    "default_params",
    "geometry_to_string",
    "lethargy_sector_times",
    "load_config",
    "load_geometry",
    "load_params",
    "load_profile",
    "make_preset",
    "parse_sector_times",
    "parse_sector_times_string",
    "reconstruct_speed",
    "run_stages",
    "sector_times_to_string",
    "simulate_lap",
]
