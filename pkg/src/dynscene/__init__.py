"""Multi-room dynamic scene graphs: static/dynamic graph building, fusion, a query store and an LLM task agent."""

__version__ = "0.1.0"
