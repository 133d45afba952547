"""Base class for pluggable lab commands.

Each command lives in ``pipelines/<name>/pipeline.py`` and is discovered
by name when the CLI starts.  Stages share one AnalysisEngine, so the
canonical system and eigenbasis are built at most once per invocation.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .engine import AnalysisEngine


class Pipeline:
    """Abstract base for a lab command.

    Subclasses override ``run()``; it writes artifacts through the engine
    (``write_json`` / ``write_with``) and returns a short summary dict
    that the CLI logs.

    Attributes:
        name:        Command name as typed on the command line (e.g. "lift-verify").
        description: One-line help text.
    """

    name: str = ""
    description: str = ""

    def run(self, engine: AnalysisEngine) -> dict:
        """Run the stage and write its artifacts.

        Args:
            engine: Shared engine holding spec, canonical system and basis.

        Raises:
            LabError: any refusal from the library; the CLI maps it to an exit code.
        """
        raise NotImplementedError
