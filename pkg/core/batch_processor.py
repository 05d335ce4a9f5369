"""
Batch Image Processor
Threaded work queue over image files; results come back in job-name order
"""
import logging
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Generic, List, TypeVar

from tqdm import tqdm

from core.image_io import ACCEPTED_EXTENSIONS, list_images
from utils.errors import EPNetError, UsageError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

R = TypeVar("R")


@dataclass(frozen=True)
class ImageJob:
    name: str          # "<set>/<file>" or "<file>" for a flat folder
    path: Path
    set_name: str = ""


class BatchProcessor(Generic[R]):
    """Runs ``process_fn`` over queued images on a pool of worker threads"""

    def __init__(self, process_fn: Callable[[ImageJob], R], workers: int = 1):
        if workers < 1:
            raise UsageError(f"workers must be >= 1, got {workers}")
        self.process_fn = process_fn
        self.workers = workers
        self.jobs: List[ImageJob] = []

    def add_files(self, paths: List[Path], set_name: str = ""):
        for path in paths:
            name = f"{set_name}/{path.name}" if set_name else path.name
            self.jobs.append(ImageJob(name, Path(path), set_name))
        logger.info(f"📋 {len(paths)} images queued{f' for {set_name}' if set_name else ''}")

    def add_folder(self, folder) -> int:
        """Queue a folder; each subdirectory holding images becomes its own set.

        Loose top-level files are only used when there are no such subdirectories.
        """
        folder = Path(folder)
        if not folder.is_dir():
            raise UsageError(f"Image directory not found: {folder}")
        before = len(self.jobs)
        flat = list_images(folder)
        subsets = [(sub, list_images(sub)) for sub in sorted(p for p in folder.iterdir() if p.is_dir())]
        subsets = [(sub, files) for sub, files in subsets if files]
        if subsets:
            if flat:
                logger.warning(f"⚠️ {len(flat)} loose images in {folder} ignored; benchmark sets are subdirectories")
            for sub, files in subsets:
                self.add_files(files, sub.name)
        elif flat:
            self.add_files(flat)
        added = len(self.jobs) - before
        if added == 0:
            raise UsageError(f"No images in {folder} (accepted extensions: {', '.join(ACCEPTED_EXTENSIONS)})")
        return added

    def run(self, progress: bool = False) -> Dict[ImageJob, R]:
        """Process every queued job; the returned dict is ordered by job name"""
        ordered = sorted(self.jobs, key=lambda job: job.name)
        work: "queue.Queue[ImageJob]" = queue.Queue()
        for job in ordered:
            work.put(job)
        results: Dict[ImageJob, R] = {}
        errors: List[BaseException] = []
        lock = threading.Lock()
        total = len(ordered)
        bar = tqdm(total=total, desc="eval", unit="img", disable=not progress)
        logger.info(f"🚀 Processing {total} images with {self.workers} worker(s)")

        def worker():
            while True:
                try:
                    job = work.get_nowait()
                except queue.Empty:
                    return
                try:
                    result = self.process_fn(job)
                    with lock:
                        results[job] = result
                        bar.update(1)
                except BaseException as exc:  # surfaced after the pool drains
                    with lock:
                        errors.append(exc)
                finally:
                    work.task_done()

        threads = [threading.Thread(target=worker, daemon=True) for _ in range(min(self.workers, total))]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        bar.close()

        if errors:
            first = errors[0]
            if not isinstance(first, EPNetError):
                logger.error(f"❌ Processing failed: {first}")
            raise first
        logger.info(f"✅ Processed {total} images")
        return {job: results[job] for job in ordered}
