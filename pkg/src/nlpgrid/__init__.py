"""nlpgrid: a brokering toolkit for component-based pipelines.

Parses declarative XML application specifications, discovers components,
data and nodes via a metadata registry, repairs media-type incompatibilities
with conversion chains, plans constraint- and preference-aware schedules,
executes them on a simulated computational grid, and caches results as new
discoverable resources.
"""

__version__ = "0.1.0"

from .speclang import (  # noqa: F401
    ApplicationDescription,
    ComponentDescription,
    DataSourceDescription,
    PipelineStep,
    RequirementSet,
    ValidationReport,
    parse_application,
    parse_component,
    serialize_application,
    serialize_component,
    substitute_variables,
    validate,
)
from .registry import MetadataRecord, Query, Registry  # noqa: F401
from .resolver import PipelineDag, build_dag, check_compat, flatten, resolve  # noqa: F401
from .broker import (  # noqa: F401
    GridNodeDescription,
    GridPool,
    Schedule,
    SchedulingPreferences,
    cache_key,
    estimate_cost,
    match_nodes,
    package,
    parse_pool,
    plan,
)
from .gridsim import ExecutionTrace, NodeFailure, StubTable, execute, verify_trace  # noqa: F401
from .vocab import VocabularyTables  # noqa: F401
