/** Boots the real cleaning service for the end-to-end test.
 *
 * Builds the moons fixture (dataset, config, oracle trace) with the backend's
 * own tooling, starts the HTTP server on a free-ish port, and waits for it to
 * answer.  Torn down when the suite ends.
 */

import { execFileSync, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

let server: ChildProcess | null = null;

export default async function setup(): Promise<() => void> {
  const here = dirname(fileURLToPath(import.meta.url));
  const fixtureDir = mkdtempSync(join(tmpdir(), "labelclean-e2e-"));
  execFileSync("python3", [join(here, "make_e2e_fixture.py"), fixtureDir], {
    stdio: ["ignore", "inherit", "inherit"],
  });

  const port = 8400 + (process.pid % 500);
  const baseUrl = `http://127.0.0.1:${port}`;
  server = spawn(
    "python3",
    ["-m", "labelclean.cli", "serve", "--addr", `127.0.0.1:${port}`,
     "--data", join(fixtureDir, "moons.json")],
    { stdio: ["ignore", "inherit", "inherit"] },
  );

  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const res = await fetch(`${baseUrl}/datasets`);
      if (res.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      server.kill();
      throw new Error("cleaning service did not come up within 30s");
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }

  process.env.E2E_BASE_URL = baseUrl;
  process.env.E2E_FIXTURE_DIR = fixtureDir;

  return () => {
    server?.kill("SIGTERM");
  };
}
