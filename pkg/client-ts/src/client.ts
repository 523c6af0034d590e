/**
 * Promise-based client: one connection, one in-flight request at a time.
 *
 * `request` frames the command text with the connection's next id, resolves
 * with the body when the matching response arrives, and rejects with
 * `CommandError` for server ERROR bodies.  Typed helpers format arguments
 * with the shortest round-trip decimal rule, so a set followed by a get
 * echoes the caller's values exactly.
 *
 * Issuing a second request while one is outstanding rejects rather than
 * interleaving frames; await each call.
 */

import * as fs from "node:fs";
import * as net from "node:net";

import {
  ERROR_PREFIX,
  Frame,
  FrameDecoder,
  ProtocolError,
  encodeFrame,
  isErrorBody,
} from "./protocol.js";

export const CAPTURE_MODALITIES = ["image", "depth", "object_mask", "normal"] as const;

export type Modality = (typeof CAPTURE_MODALITIES)[number];

export type Triple = [number, number, number];

export type Bounds = { min: Triple; max: Triple };

export class ClientError extends Error {}

/** Server unreachable: refused, timed out, or unresolvable. */
export class ConnectError extends ClientError {}

/** Connection dropped mid-request. */
export class TransportError extends ClientError {}

/** Server answered with an ERROR body; `message` omits the prefix. */
export class CommandError extends ClientError {
  readonly body: string;

  constructor(message: string, body: string) {
    super(message);
    this.body = body;
  }
}

interface Pending {
  id: number;
  resolve: (body: string) => void;
  reject: (err: Error) => void;
}

export class Client {
  private readonly sock: net.Socket;
  private readonly decoder = new FrameDecoder();
  private nextId = 1;
  private pending: Pending | null = null;
  private fatal: Error | null = null;

  private constructor(sock: net.Socket) {
    this.sock = sock;
    sock.on("data", (chunk) => this.onData(chunk));
    sock.on("error", (err) =>
      this.fail(new TransportError(`connection lost: ${err.message}`)),
    );
    sock.on("close", () =>
      this.fail(
        this.pending
          ? new TransportError("connection lost: stream ended mid-request")
          : new TransportError("connection closed"),
      ),
    );
  }

  /** Open a connection; rejects with ConnectError within `timeoutMs`. */
  static connect(host: string, port: number, timeoutMs = 5000): Promise<Client> {
    return new Promise((resolve, reject) => {
      const sock = net.createConnection({ host, port });
      sock.setNoDelay(true);
      const abort = (why: string) => {
        sock.destroy();
        reject(new ConnectError(`cannot connect to ${host}:${port}: ${why}`));
      };
      sock.setTimeout(timeoutMs, () => abort(`timed out after ${timeoutMs} ms`));
      sock.once("error", (err) => abort(err.message));
      sock.once("connect", () => {
        sock.setTimeout(0);
        sock.removeAllListeners("error");
        resolve(new Client(sock));
      });
    });
  }

  close(): void {
    if (this.fatal === null) {
      this.fatal = new TransportError("connection closed");
    }
    this.sock.destroy();
  }

  /** Send one command, wait for its response, resolve with the body. */
  request(commandText: string): Promise<string> {
    if (this.pending !== null) {
      return Promise.reject(
        new ProtocolError("connection already has a request in flight"),
      );
    }
    if (this.fatal !== null) {
      return Promise.reject(this.fatal);
    }
    let wire: Buffer;
    try {
      wire = encodeFrame({ requestId: this.nextId, body: commandText });
    } catch (err) {
      return Promise.reject(err);
    }
    const id = this.nextId;
    this.nextId += 1;
    return new Promise((resolve, reject) => {
      this.pending = { id, resolve, reject };
      this.sock.write(wire);
    });
  }

  // -- typed helpers --------------------------------------------------------

  async listObjects(): Promise<string[]> {
    const body = await this.request("vget /objects");
    return body === "" ? [] : body.split(/\s+/);
  }

  async getCameraLocation(camera: number): Promise<Triple> {
    return parseTriple(await this.request(`vget /camera/${camera}/location`));
  }

  async setCameraLocation(camera: number, xyz: Triple): Promise<void> {
    await this.request(`vset /camera/${camera}/location ${fmtTriple(xyz)}`);
  }

  async getCameraRotation(camera: number): Promise<Triple> {
    return parseTriple(await this.request(`vget /camera/${camera}/rotation`));
  }

  async setCameraRotation(camera: number, yawPitchRoll: Triple): Promise<void> {
    await this.request(`vset /camera/${camera}/rotation ${fmtTriple(yawPitchRoll)}`);
  }

  /** Render one modality; resolves with the server-side file path. */
  async capture(camera: number, modality: Modality): Promise<string> {
    if (!(CAPTURE_MODALITIES as readonly string[]).includes(modality)) {
      throw new RangeError(
        `modality ${JSON.stringify(modality)} is not one of ${CAPTURE_MODALITIES.join(", ")}`,
      );
    }
    const path = await this.request(`vget /camera/${camera}/${modality}`);
    if (!isLocalFile(path)) {
      throw new ClientError(
        `server reported ${path} but it does not exist locally ` +
          "(client and server must share a filesystem)",
      );
    }
    return path;
  }

  async getObjectColor(name: string): Promise<Triple> {
    const [r, g, b] = parseTriple(await this.request(`vget /object/${name}/color`));
    return [Math.trunc(r), Math.trunc(g), Math.trunc(b)];
  }

  async setObjectColor(name: string, rgb: Triple): Promise<void> {
    const [r, g, b] = rgb.map(Math.trunc);
    await this.request(`vset /object/${name}/color ${r} ${g} ${b}`);
  }

  async setObjectLocation(name: string, xyz: Triple): Promise<void> {
    await this.request(`vset /object/${name}/location ${fmtTriple(xyz)}`);
  }

  async setLightIntensity(name: string, value: number): Promise<void> {
    await this.request(`vset /light/${name}/intensity ${fmtReal(value)}`);
  }

  async setLightColor(name: string, rgb: Triple): Promise<void> {
    await this.request(`vset /light/${name}/color ${fmtTriple(rgb)}`);
  }

  async getSceneBounds(): Promise<Bounds> {
    return parseBounds(await this.request("vget /scene/bounds"));
  }

  async getObjectBounds(name: string): Promise<Bounds> {
    return parseBounds(await this.request(`vget /object/${name}/bounds`));
  }

  // -- socket plumbing ------------------------------------------------------

  private onData(chunk: Buffer): void {
    let frames: Frame[];
    try {
      frames = this.decoder.push(chunk);
    } catch (err) {
      this.fail(err instanceof Error ? err : new ProtocolError(String(err)));
      return;
    }
    for (const frame of frames) {
      this.onFrame(frame);
    }
  }

  private onFrame(frame: Frame): void {
    const pending = this.pending;
    if (pending === null) {
      this.fail(new ProtocolError(`unsolicited response id ${frame.requestId}`));
      return;
    }
    this.pending = null;
    if (frame.requestId !== pending.id) {
      pending.reject(
        new ProtocolError(
          `response id ${frame.requestId} does not match request id ${pending.id}`,
        ),
      );
      return;
    }
    if (isErrorBody(frame.body)) {
      pending.reject(new CommandError(frame.body.slice(ERROR_PREFIX.length), frame.body));
      return;
    }
    pending.resolve(frame.body);
  }

  private fail(err: Error): void {
    if (this.fatal !== null) {
      return;
    }
    this.fatal = err;
    const pending = this.pending;
    this.pending = null;
    this.sock.destroy();
    if (pending !== null) {
      pending.reject(err);
    }
  }
}

export function fmtReal(value: number): string {
  // Number stringification is already the shortest round-trip decimal and
  // drops the trailing .0 of integral values; only non-finite needs a guard.
  if (!Number.isFinite(value)) {
    throw new RangeError(`cannot format ${value} as a command argument`);
  }
  return String(value);
}

function fmtTriple(values: Triple): string {
  return `${fmtReal(values[0])} ${fmtReal(values[1])} ${fmtReal(values[2])}`;
}

function parseReal(token: string): number {
  const value = Number(token);
  if (token === "" || !Number.isFinite(value)) {
    throw new ProtocolError(`bad numeric token ${JSON.stringify(token)}`);
  }
  return value;
}

function parseTriple(body: string): Triple {
  const tokens = body.split(/\s+/).filter((t) => t !== "");
  if (tokens.length !== 3) {
    throw new ProtocolError(`expected 3 numbers, got ${JSON.stringify(body)}`);
  }
  return [parseReal(tokens[0]), parseReal(tokens[1]), parseReal(tokens[2])];
}

function parseBounds(body: string): Bounds {
  const tokens = body.split(/\s+/).filter((t) => t !== "");
  if (tokens.length !== 6) {
    throw new ProtocolError(`expected 6 numbers, got ${JSON.stringify(body)}`);
  }
  const vals = tokens.map(parseReal);
  return { min: [vals[0], vals[1], vals[2]], max: [vals[3], vals[4], vals[5]] };
}

function isLocalFile(path: string): boolean {
  try {
    return fs.statSync(path).isFile();
  } catch {
    return false;
  }
}
