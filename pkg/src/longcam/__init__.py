"""Long-term conjunction collision-avoidance maneuvers by sequential convex programming."""
from .conjunction import Conjunction, ballistic_metrics, build
from .risk import MetricKind, RiskMetricSpec
from .scenario import ScenarioError, ScenarioSpec, bundled_scenarios, load_scenario
from .scp import ManeuverPlan, ScpConfig, SensitivityConfig, run, validate_plan

__version__ = "0.1.0"

__all__ = [
    "Conjunction", "ballistic_metrics", "build", "MetricKind", "RiskMetricSpec", "ScenarioError",
    "ScenarioSpec", "bundled_scenarios", "load_scenario", "ManeuverPlan", "ScpConfig",
    "SensitivityConfig", "run", "validate_plan",
]
