/** Shared fixtures: spawn the reference server, proxy and record wire bytes. */

import { spawn } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import * as net from "node:net";
import { tmpdir } from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

import { Frame, FrameDecoder } from "../src/protocol.js";

export const SCENE_PATH = fileURLToPath(
  new URL("../../src/virtucv/scenes/room.scene.json", import.meta.url),
);

export const ALG1_SCRIPT = fileURLToPath(new URL("../dist/alg1.js", import.meta.url));

export interface ServerHandle {
  port: number;
  outDir: string;
  commandLog: () => Buffer;
  stop: () => Promise<void>;
}

export async function startServer(): Promise<ServerHandle> {
  const outDir = mkdtempSync(path.join(tmpdir(), "virtucv-ts-"));
  const proc = spawn(
    "virtucv-server",
    ["--scene", SCENE_PATH, "--port", "0", "--out", outDir],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderrText = "";
  proc.stderr.on("data", (chunk: Buffer) => {
    stderrText += chunk.toString("utf-8");
  });
  const port = await new Promise<number>((resolve, reject) => {
    let seen = "";
    const deadline = setTimeout(() => {
      reject(new Error(`server did not report a port within 10s: ${seen}${stderrText}`));
    }, 10000);
    proc.stdout.on("data", (chunk: Buffer) => {
      seen += chunk.toString("utf-8");
      const match = seen.match(/listening on 127\.0\.0\.1:(\d+)/);
      if (match) {
        clearTimeout(deadline);
        resolve(Number(match[1]));
      }
    });
    proc.once("exit", (code) => {
      clearTimeout(deadline);
      reject(new Error(`server exited early with code ${code}: ${stderrText}`));
    });
  });
  return {
    port,
    outDir,
    commandLog: () => readFileSync(path.join(outDir, "commands.log")),
    stop: () =>
      new Promise<void>((resolve) => {
        proc.once("exit", () => resolve());
        proc.kill("SIGTERM");
      }),
  };
}

export interface ProxyHandle {
  port: number;
  /** Every byte clients sent toward the server, in arrival order. */
  requestBytes: () => Buffer;
  close: () => Promise<void>;
}

export function startRecordingProxy(targetPort: number): Promise<ProxyHandle> {
  const chunks: Buffer[] = [];
  const live = new Set<net.Socket>();
  const server = net.createServer((downstream) => {
    const upstream = net.createConnection({ host: "127.0.0.1", port: targetPort });
    live.add(downstream);
    live.add(upstream);
    downstream.on("data", (data: Buffer) => {
      chunks.push(Buffer.from(data));
      upstream.write(data);
    });
    upstream.on("data", (data: Buffer) => downstream.write(data));
    downstream.on("close", () => upstream.destroy());
    upstream.on("close", () => downstream.destroy());
    downstream.on("error", () => upstream.destroy());
    upstream.on("error", () => downstream.destroy());
  });
  return new Promise((resolve) => {
    server.listen(0, "127.0.0.1", () => {
      const addr = server.address() as net.AddressInfo;
      resolve({
        port: addr.port,
        requestBytes: () => Buffer.concat(chunks),
        close: () =>
          new Promise<void>((done) => {
            for (const sock of live) {
              sock.destroy();
            }
            server.close(() => done());
          }),
      });
    });
  });
}

/** Decode a captured byte stream that must end exactly on a frame boundary. */
export function decodeStream(stream: Buffer): Frame[] {
  const decoder = new FrameDecoder();
  const frames = decoder.push(stream);
  if (decoder.pendingBytes !== 0) {
    throw new Error(`capture ends mid-frame with ${decoder.pendingBytes} bytes left`);
  }
  return frames;
}

export function runScript(command: string, args: string[]): Promise<string> {
  return new Promise((resolve, reject) => {
    const proc = spawn(command, args, { stdio: ["ignore", "pipe", "pipe"] });
    let out = "";
    let errText = "";
    proc.stdout.on("data", (chunk: Buffer) => (out += chunk.toString("utf-8")));
    proc.stderr.on("data", (chunk: Buffer) => (errText += chunk.toString("utf-8")));
    proc.once("exit", (code) => {
      if (code === 0) {
        resolve(out);
      } else {
        reject(new Error(`${command} exited with ${code}: ${errText}`));
      }
    });
    proc.once("error", reject);
  });
}
