"""Run every synthetic scene preset of an environment folder.

Usage:
    python scripts/launch_scenes.py environments/synthetic --out runs

For each *.yml preset one child process generates the scene
(`python -m pipeline.cli synth`) and, once that succeeds, a second one runs
the whole pipeline on it (`python -m pipeline.cli run`). Scenes run
concurrently; Ctrl+C terminates every child.
"""
from __future__ import annotations

import argparse
import os
import signal
import subprocess
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

PROJECT_ROOT = Path(__file__).resolve().parent.parent


class SceneLauncher:
    def __init__(self, out_root: Path):
        self.out_root = out_root
        self.procs: Dict[str, subprocess.Popen] = {}
        self.results: Dict[str, int] = {}
        self.original_sigint = signal.getsignal(signal.SIGINT)
        self.original_sigterm = signal.getsignal(signal.SIGTERM)
        signal.signal(signal.SIGINT, self._signal_handler)
        signal.signal(signal.SIGTERM, self._signal_handler)

    def _signal_handler(self, signum, frame):
        """Handle termination signals by cleaning up child processes."""
        print(f"\nReceived signal {signal.Signals(signum).name}, stopping scenes...")
        self.cleanup()
        signal.signal(signal.SIGINT, self.original_sigint)
        signal.signal(signal.SIGTERM, self.original_sigterm)
        os.kill(os.getpid(), signum)

    def _spawn(self, key: str, args: List[str]) -> Optional[subprocess.Popen]:
        try:
            proc = subprocess.Popen(
                [sys.executable, "-m", "pipeline.cli", *args],
                cwd=PROJECT_ROOT,
                start_new_session=True,
            )
        except OSError as e:
            print(f"[error] Failed to start {key}: {e}", file=sys.stderr)
            self.results[key] = -1
            return None
        self.procs[key] = proc
        print(f"[launch] {key} started (PID: {proc.pid})")
        return proc

    def launch_scene(self, preset: Path) -> None:
        """Start the synth step of one preset; the run step follows in :meth:`poll`."""
        out = self.out_root / preset.stem
        self._spawn(f"{preset.stem}:synth", ["synth", "--config", str(preset.resolve()), "--out", str(out)])

    def poll(self) -> bool:
        """Reap finished children, chaining run after synth. Returns True while work remains."""
        for key, proc in list(self.procs.items()):
            code = proc.poll()
            if code is None:
                continue
            del self.procs[key]
            self.results[key] = code
            print(f"[done] {key} exited with {code}")
            scene, step = key.split(":")
            if step == "synth" and code == 0:
                out = self.out_root / scene
                self._spawn(f"{scene}:run", [
                    "run",
                    "--input", str(out / "samples.csv"),
                    "--truth", str(out / "truth.json"),
                    "--config", str(out / "config.yml"),
                    "--out", str(out),
                ])
        return bool(self.procs)

    def cleanup(self):
        """Terminate, then kill, every child still running."""
        if not self.procs:
            return

        print("\nCleaning up scene processes...")
        for proc in self.procs.values():
            if proc.poll() is None:
                try:
                    proc.terminate()
                except OSError as e:
                    print(f"  Error terminating process {proc.pid}: {e}")

        time.sleep(2)

        for proc in self.procs.values():
            if proc.poll() is None:
                try:
                    print(f"  Force killing scene (PID: {proc.pid})...")
                    proc.kill()
                except OSError as e:
                    print(f"  Error killing process {proc.pid}: {e}")

        for proc in self.procs.values():
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                print(f"  Warning: Process {proc.pid} did not terminate in time")

        print("Cleanup complete.")
        self.procs.clear()


def launch_scenes(env_dirs: List[Path], out_root: Path) -> int:
    for env_dir in env_dirs:
        if not env_dir.is_dir():
            sys.exit(f"Environment path {env_dir} is not a directory")

    presets: List[Path] = []
    for env_dir in env_dirs:
        presets.extend(sorted(env_dir.glob("*.yml")))

    if not presets:
        sys.exit("No *.yml presets found in provided environment directories")

    launcher = SceneLauncher(out_root)
    try:
        for preset in presets:
            launcher.launch_scene(preset)
        while launcher.poll():
            time.sleep(0.5)
    except KeyboardInterrupt:
        print("\nKeyboard interrupt received, shutting down...")
    finally:
        launcher.cleanup()

    failed = sorted(k for k, code in launcher.results.items() if code != 0)
    print(f"\n{len(presets)} scene(s), {len(failed)} failed step(s)" + (f": {', '.join(failed)}" if failed else ""))
    return 1 if failed else 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description="Run every synthetic scene preset in a folder")
    ap.add_argument("env", type=Path, nargs="+", help="One or more directories containing *.yml scene presets")
    ap.add_argument("--out", type=Path, default=Path("runs"), help="Root directory for per-scene outputs")
    args = ap.parse_args()
    sys.exit(launch_scenes(args.env, args.out.resolve()))
