/**
 * Minimal capture loop: list objects, then per pose grab image + ground truth.
 *
 * Run with a server up:  node dist/alg1.js [--host H] [--port P]
 *
 * The fixed integer poses keep the transcript reproducible; other clients
 * replaying the same loop should produce an identical server command log.
 */

import { pathToFileURL } from "node:url";

import { Client } from "./client.js";

export const POSES: ReadonlyArray<readonly [number, number, number, number]> = [
  [0, -150, 165, 0],
  [100, -200, 165, 90],
  [-100, -100, 9, 180],
  [50, -250, 9, 270],
];

export function defaultPort(): number {
  return Number.parseInt(process.env.VIRTUCV_PORT ?? "9000", 10);
}

export async function runAlg1(
  client: Client,
  print: (line: string) => void = console.log,
): Promise<void> {
  print(await client.request("vget /objects"));
  for (const [x, y, z, yaw] of POSES) {
    await client.request(`vset /camera/0/location ${x} ${y} ${z}`);
    await client.request(`vset /camera/0/rotation ${yaw} 0 0`);
    for (const modality of ["image", "depth", "object_mask"] as const) {
      print(await client.request(`vget /camera/0/${modality}`));
    }
  }
}

export async function main(argv: string[]): Promise<number> {
  let host = "127.0.0.1";
  let port = defaultPort();
  for (let i = 0; i < argv.length; i += 1) {
    const flag = argv[i];
    const value = argv[i + 1];
    if ((flag === "--host" || flag === "--port") && value === undefined) {
      console.error(`${flag} needs a value`);
      return 2;
    }
    if (flag === "--host") {
      host = value;
      i += 1;
    } else if (flag === "--port") {
      port = Number.parseInt(value, 10);
      i += 1;
    } else {
      console.error(`unknown argument ${flag}; usage: alg1 [--host H] [--port P]`);
      return 2;
    }
  }
  const client = await Client.connect(host, port);
  try {
    await runAlg1(client);
  } finally {
    client.close();
  }
  return 0;
}

const entry = process.argv[1];
if (entry !== undefined && import.meta.url === pathToFileURL(entry).href) {
  main(process.argv.slice(2)).then(
    (code) => {
      process.exitCode = code;
    },
    (err) => {
      console.error(err instanceof Error ? err.message : err);
      process.exitCode = 1;
    },
  );
}
