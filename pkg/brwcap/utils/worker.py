"""
Worker pool for running independent trials in background processes.
"""

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Iterator, Optional

logger = logging.getLogger(__name__)


@dataclass
class TaskOutcome:
    """Result of one task: either a value or the failure that replaced it"""
    task: Any
    result: Any = None
    error: Optional[str] = None
    error_type: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _run_task(task_func, task) -> TaskOutcome:
    """Execute one task, capturing any exception"""
    try:
        return TaskOutcome(task=task, result=task_func(task))
    except Exception as e:
        logger.error(f"Error in worker task {task!r}: {str(e)}")
        logger.debug(traceback.format_exc())
        return TaskOutcome(task=task, error=str(e), error_type=type(e).__name__)


class _Bound:
    """Picklable pairing of a task function with the task runner"""

    def __init__(self, task_func):
        self.task_func = task_func

    def __call__(self, task):
        return _run_task(self.task_func, task)


class TrialPool:
    """Runs tasks in task order across worker processes"""

    def __init__(self,
                 task_func: Callable[[Any], Any],
                 workers: int = 1,
                 initializer: Optional[Callable] = None,
                 initargs: tuple = (),
                 progress_callback: Optional[Callable[[int, str], None]] = None):
        """
        Initialize the pool

        Args:
            task_func: Module-level function executed once per task
            workers: Number of processes; 1 runs every task inline
            initializer: Per-process setup (for example warming a Green evaluator)
            initargs: Arguments passed to initializer
            progress_callback: Called as progress_callback(percent, status)
        """
        self.task_func = task_func
        self.workers = max(1, int(workers))
        self.initializer = initializer
        self.initargs = initargs
        self.progress_callback = progress_callback
        self.running = False

    def report_progress(self, value, status_text=None):
        if self.progress_callback:
            self.progress_callback(value, status_text)

    def run(self, tasks: Iterable[Any]) -> Iterator[TaskOutcome]:
        """
        Yield one TaskOutcome per task, in the order the tasks were given.

        Scheduling across processes never changes the output order.
        """
        tasks = list(tasks)
        total = len(tasks)
        self.running = True
        self.report_progress(0, f"Starting {total} tasks on {self.workers} worker(s)...")
        bound = _Bound(self.task_func)

        try:
            if self.workers == 1:
                if self.initializer:
                    self.initializer(*self.initargs)
                outcomes = map(bound, tasks)
                for done, outcome in enumerate(outcomes, start=1):
                    self.report_progress(int(100 * done / total), f"Task {done}/{total} finished")
                    yield outcome
            else:
                with ProcessPoolExecutor(max_workers=self.workers,
                                         initializer=self.initializer,
                                         initargs=self.initargs) as executor:
                    for done, outcome in enumerate(executor.map(bound, tasks), start=1):
                        self.report_progress(int(100 * done / total), f"Task {done}/{total} finished")
                        yield outcome
        finally:
            self.running = False

        self.report_progress(100, "All tasks completed.")

    def is_running(self):
        """Check if the pool is running"""
        return self.running
