import io
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Literal, Optional

import requests
from PIL import Image
from pydantic import BaseModel, Field
from tqdm import tqdm

from config import Config
from dataset.manifest import DatasetManifest, ImageRecord

logger = logging.getLogger(__name__)


class IntegrityError(RuntimeError):
    """Decoded image dimensions disagree with the manifest"""


class ImageStatus(BaseModel):
    image_id: str
    status: Literal["cached", "downloaded", "failed"]
    width: Optional[int] = None
    height: Optional[int] = None
    error: Optional[str] = None


class IntegrityReport(BaseModel):
    entries: List[ImageStatus] = Field(default_factory=list)
    violations: List[str] = Field(default_factory=list)

    @property
    def failed(self) -> List[str]:
        return [e.image_id for e in self.entries if e.status == "failed"]

    def count(self, status: str) -> int:
        return sum(1 for e in self.entries if e.status == status)

    def raise_for_violations(self):
        if self.violations:
            raise IntegrityError(f"Decoded dimensions differ from the manifest for: {self.violations}")


def cache_path(record: ImageRecord, cache_dir) -> Path:
    return Path(cache_dir) / f"{record.image_id}.{record.extension}"


def decode_dimensions(path: Path):
    """Fully decode the file (truncated files fail here) and return (width, height)"""
    with Image.open(path) as img:
        img.load()
        return img.size


class ImageDownloader:
    def __init__(self, cache_dir=None, workers: Optional[int] = None, session=None, offline: Optional[bool] = None):
        self.cache_dir = Path(cache_dir or Config.image_cache_dir())
        self.workers = workers or Config.DOWNLOAD_WORKERS
        self.offline = Config.OFFLINE if offline is None else offline
        self.session = session
        self.fetch_count = 0
        self._count_lock = threading.Lock()

    def connect(self):
        """Create the HTTP session lazily so warm-cache runs never touch the network"""
        if self.session is None:
            self.session = requests.Session()
            self.session.headers.update({"User-Agent": "har-bench/1.0"})
            logger.info("🔗 HTTP session ready")
        return self.session

    def _fetch(self, record: ImageRecord) -> bytes:
        if self.offline:
            raise ConnectionError("offline mode is enabled and the image is not cached")
        if not record.url:
            raise ValueError("record has no URL")
        response = self.connect().get(record.url, timeout=30)
        response.raise_for_status()
        with self._count_lock:
            self.fetch_count += 1
        return response.content

    def _process(self, record: ImageRecord) -> ImageStatus:
        path = cache_path(record, self.cache_dir)
        status = "cached"
        try:
            if not path.exists():
                payload = self._fetch(record)
                # Decode before writing so a bad response never lands in the cache
                with Image.open(io.BytesIO(payload)) as img:
                    img.load()
                tmp = path.with_suffix(path.suffix + ".part")
                tmp.write_bytes(payload)
                tmp.replace(path)
                status = "downloaded"
            width, height = decode_dimensions(path)
        except Exception as e:
            logger.error(f"❌ Image {record.image_id} failed: {e}")
            return ImageStatus(image_id=record.image_id, status="failed", error=str(e))
        return ImageStatus(image_id=record.image_id, status=status, width=width, height=height)

    def download_images(self, manifest: DatasetManifest) -> IntegrityReport:
        """Fetch every manifest image into the cache and check decoded dimensions.

        Failures are reported per image and never abort the batch. The report lists
        entries in manifest order whatever the scheduling of the worker threads.
        """
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        records = manifest.records
        if not records:
            return IntegrityReport()

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            entries = list(
                tqdm(pool.map(self._process, records), total=len(records), desc="images", disable=len(records) < 20)
            )

        violations = [
            record.image_id
            for record, entry in zip(records, entries)
            if entry.status != "failed" and (entry.width, entry.height) != (record.width, record.height)
        ]
        report = IntegrityReport(entries=entries, violations=violations)
        logger.info(
            f"📊 Images: {report.count('cached')} cached, {report.count('downloaded')} downloaded, "
            f"{report.count('failed')} failed, {len(violations)} integrity violations"
        )
        if violations:
            logger.warning(f"⚠️ Dimension mismatch for {violations}")
        return report


def download_images(manifest: DatasetManifest, cache_dir, workers: Optional[int] = None) -> IntegrityReport:
    return ImageDownloader(cache_dir=cache_dir, workers=workers).download_images(manifest)
