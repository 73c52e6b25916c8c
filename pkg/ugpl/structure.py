#! /usr/bin/python3
from .event import (Event, ResolvableBool, GlobalForward, EstimateUncertainty, SelectPatches,
                    LocalRefine, Fuse, ComputeLoss, CheckFinite, OptimizerStep, CollectPredictions)
from .errors import EventError
from typing import Union, List, TYPE_CHECKING
if TYPE_CHECKING:
    # Otherwise a circular dependency
    from .runner import Runner

# These can all be fed to a Sequence() initializer.
SequenceUnion = Union['Sequence', List[Event], Event]


class Sequence(Event):
    """A sequence of ordered events"""
    def __init__(self,
                 events: Union['Sequence', List[Event], Event],
                 enable: ResolvableBool = True):
        """Events can be a Sequence, a single Event, or a list of Events.  If
enable is False, this turns into a noop (e.g. a stage the ablation
removes)."""
        super().__init__()
        self.enable = enable
        if type(events) is Sequence:
            # mypy gets upset because Sequence isn't defined yet.
            self.events = events.events  # type: ignore
            self.enable = events.enable  # type: ignore
            self.name = events.name      # type: ignore
        elif isinstance(events, Event):
            self.events = [events]
        else:
            self.events = events

    def enabled(self, runner: 'Runner') -> bool:
        return bool(self.resolve_arg('enable', runner, self.enable))

    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        all_done = True
        for e in self.events:
            if not e.enabled(runner):
                continue
            try:
                all_done &= e.action(runner)
            except EventError as ee:
                ee.add_path(self)
                raise
        return all_done


class TryAll(Event):
    """Event representing multiple sequences, each of which should be run once"""
    def __init__(self, *args: SequenceUnion):
        super().__init__()
        self.sequences = [Sequence(s) for s in args]
        self.done = [False] * len(self.sequences)

    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        enabled = [i for i, s in enumerate(self.sequences) if s.enabled(runner)]
        undone = [i for i in enabled if not self.done[i]]
        if undone:
            self.done[undone[0]] = True
            self.sequences[undone[0]].action(runner)
        elif enabled:
            # Note: they might *all* be disabled!
            self.sequences[enabled[0]].action(runner)
        return len(undone) <= 1


def _training(runner: 'Runner', event: Event, field: str) -> bool:
    return bool(runner.training)


def _collecting(runner: 'Runner', event: Event, field: str) -> bool:
    return not runner.training


def pipeline(ablation: str = 'full') -> Sequence:
    """The per-batch stages for one ablation mode"""
    global_only = ablation == 'global_only'
    return Sequence([GlobalForward(),
                     EstimateUncertainty(),
                     Sequence([SelectPatches(mode=ablation), LocalRefine()], enable=not global_only),
                     Fuse(global_only=global_only),
                     ComputeLoss(global_only=global_only),
                     CheckFinite(),
                     Sequence(OptimizerStep(), enable=_training),
                     Sequence(CollectPredictions(), enable=_collecting)])


def test_tryall_runs_each_alternative() -> None:
    class nullrunner(object):
        class dummyconfig(object):
            def getoption(self, name: str) -> bool:
                return False

        def __init__(self) -> None:
            self.config = self.dummyconfig()

    seen = []

    class Mark(Event):
        def __init__(self, tag: str):
            super().__init__()
            self.tag = tag

        def action(self, runner: 'Runner') -> bool:
            seen.append(self.tag)
            return True

    # One alternative per pass; done after the second.
    seq = Sequence(TryAll(Mark('full'), Mark('global_only')))
    assert seq.action(nullrunner()) is False  # type: ignore
    assert seq.action(nullrunner()) is True  # type: ignore
    assert seen == ['full', 'global_only']
