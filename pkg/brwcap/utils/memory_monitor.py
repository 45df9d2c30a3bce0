"""
Memory monitoring and allocation guard for large forests, tables and solves.
"""

import os
import sys
import time
import logging
import threading
import traceback
from datetime import datetime

import psutil

from brwcap.utils.errors import MemoryBudgetError

logger = logging.getLogger(__name__)


class MemoryMonitor:
    """Monitors memory usage during long experiment runs."""

    def __init__(self, interval: float = 1.0, spike_mb: float = 500.0):
        self.monitoring = False
        self.monitor_thread = None
        self.interval = interval
        self.spike_mb = spike_mb
        self.last_memory_usage = 0.0
        self.peak_memory_usage = 0.0
        self.memory_fraction = 0.8

    def start_monitoring(self):
        """Start monitoring memory usage in a background thread."""
        if self.monitoring:
            return

        self.monitoring = True
        self.monitor_thread = threading.Thread(target=self._monitor_thread_func)
        self.monitor_thread.daemon = True
        self.monitor_thread.start()
        logger.info("Memory monitoring started")

    def stop_monitoring(self):
        """Stop the memory monitoring thread."""
        self.monitoring = False
        if self.monitor_thread:
            self.monitor_thread.join(timeout=self.interval + 1.0)
        logger.info(f"Memory monitoring stopped. Peak usage: {self.peak_memory_usage:.1f} MB")

    def _get_memory_usage(self):
        """Get current resident memory of the process in MB."""
        try:
            return psutil.Process(os.getpid()).memory_info().rss / 1024 / 1024
        except Exception as e:
            logger.error(f"Error getting memory usage: {str(e)}")
            return 0.0

    def _monitor_thread_func(self):
        """Background thread function for monitoring memory."""
        try:
            while self.monitoring:
                current_usage = self._get_memory_usage()

                if current_usage > self.peak_memory_usage:
                    self.peak_memory_usage = current_usage

                memory_change = current_usage - self.last_memory_usage
                if memory_change > self.spike_mb:
                    logger.warning(f"Memory spike: {memory_change:.1f} MB increase "
                                   f"(now {current_usage:.1f} MB)")

                available = psutil.virtual_memory().available / 1024 / 1024
                if available < 256:
                    logger.critical(f"Available memory critically low: {available:.1f} MB")
                    self._write_emergency_dump(f"Available memory {available:.1f} MB")

                self.last_memory_usage = current_usage
                time.sleep(self.interval)

        except Exception as e:
            tb = traceback.format_exc()
            logger.error(f"Error in memory monitoring thread: {str(e)}\n{tb}")

    def _write_emergency_dump(self, reason):
        """Write the stack of every thread before a potential out-of-memory kill."""
        try:
            dump_dir = os.path.join(os.getcwd(), "emergency_dumps")
            os.makedirs(dump_dir, exist_ok=True)

            timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
            dump_file = os.path.join(dump_dir, f"emergency_dump_{timestamp}.log")

            with open(dump_file, 'w') as f:
                f.write("=== EMERGENCY MEMORY DUMP ===\n")
                f.write(f"Time: {datetime.now()}\n")
                f.write(f"Reason: {reason}\n")
                f.write(f"Current memory: {self.last_memory_usage:.2f} MB\n")
                f.write(f"Peak memory: {self.peak_memory_usage:.2f} MB\n\n")

                f.write("=== STACK TRACE ===\n")
                for thread_id, frame in sys._current_frames().items():
                    f.write(f"\nThread {thread_id}:\n")
                    f.write(''.join(traceback.format_stack(frame)))

            logger.info(f"Emergency memory dump written to {dump_file}")
        except Exception as e:
            logger.error(f"Failed to write emergency dump: {str(e)}")

    def check_allocation(self, nbytes: float, what: str):
        """
        Refuse an allocation that would not fit in the memory budget.

        Args:
            nbytes: Planned size of the allocation in bytes
            what: Human-readable description used in the error message

        Raises:
            MemoryBudgetError: if nbytes exceeds memory_fraction of available memory
        """
        available = psutil.virtual_memory().available
        budget = self.memory_fraction * available
        if nbytes > budget:
            raise MemoryBudgetError(
                f"{what} needs {nbytes / 2**20:.1f} MB but only {budget / 2**20:.1f} MB "
                f"of the memory budget is available")
        logger.debug(f"Allocation check passed for {what}: {nbytes / 2**20:.1f} MB")


# Global memory monitor instance
memory_monitor = MemoryMonitor()
