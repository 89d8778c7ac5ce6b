from langgraph.graph import END, START, StateGraph

from app.experiments import (
    collect_orders,
    plan_levels,
    route_levels,
    solve_level,
    solve_levels,
    write_results,
)
from app.models import ExperimentState, LevelTask


def get_experiment_graph():
    builder = StateGraph(ExperimentState)
    builder.add_node("plan_levels", plan_levels)
    builder.add_node("solve_level", solve_level, input=LevelTask)
    builder.add_node("solve_levels", solve_levels)
    builder.add_node("collect_orders", collect_orders)
    builder.add_node("write_results", write_results)

    # Flow
    builder.add_edge(START, "plan_levels")
    builder.add_conditional_edges(
        "plan_levels", route_levels, ["solve_level", "solve_levels"]
    )
    builder.add_edge("solve_level", "collect_orders")
    builder.add_edge("solve_levels", "collect_orders")
    builder.add_edge("collect_orders", "write_results")
    builder.add_edge("write_results", END)
    return builder.compile()
