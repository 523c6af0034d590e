/**
 * Wire codec for the virtucv command protocol.
 *
 * A frame is a 4-byte little-endian unsigned length followed by that many
 * bytes of UTF-8 text shaped `id:body`.  Request ids are non-negative
 * decimal integers chosen by the client; the server echoes the id of the
 * request each response answers.  Response bodies that begin with `error `
 * are failures; anything else is data.
 */

export const MAX_PAYLOAD = 16 * 1024 * 1024;

export const ERROR_PREFIX = "error ";

export class ProtocolError extends Error {}

export interface Frame {
  requestId: number;
  body: string;
}

const utf8Strict = new TextDecoder("utf-8", { fatal: true });

export function encodeFrame(frame: Frame): Buffer {
  if (!Number.isInteger(frame.requestId) || frame.requestId < 0) {
    throw new ProtocolError("request id must be a non-negative integer");
  }
  const payload = Buffer.from(`${frame.requestId}:${frame.body}`, "utf-8");
  if (payload.length > MAX_PAYLOAD) {
    throw new ProtocolError(
      `payload of ${payload.length} bytes exceeds the ${MAX_PAYLOAD} byte limit`,
    );
  }
  const head = Buffer.allocUnsafe(4);
  head.writeUInt32LE(payload.length, 0);
  return Buffer.concat([head, payload]);
}

export function parsePayload(payload: Buffer): Frame {
  let text: string;
  try {
    text = utf8Strict.decode(payload);
  } catch {
    throw new ProtocolError("payload is not valid UTF-8");
  }
  const sep = text.indexOf(":");
  if (sep < 0) {
    throw new ProtocolError("payload has no id:body separator");
  }
  const ident = text.slice(0, sep);
  if (!/^[0-9]+$/.test(ident)) {
    throw new ProtocolError(
      `request id ${JSON.stringify(ident)} is not a decimal unsigned integer`,
    );
  }
  return { requestId: Number(ident), body: text.slice(sep + 1) };
}

/** Incremental decoder: feed socket chunks, collect whole frames. */
export class FrameDecoder {
  private buf: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): Frame[] {
    this.buf = this.buf.length === 0 ? chunk : Buffer.concat([this.buf, chunk]);
    const frames: Frame[] = [];
    for (;;) {
      if (this.buf.length < 4) {
        return frames;
      }
      const length = this.buf.readUInt32LE(0);
      if (length > MAX_PAYLOAD) {
        throw new ProtocolError(
          `declared payload of ${length} bytes exceeds the ${MAX_PAYLOAD} byte limit`,
        );
      }
      if (this.buf.length < 4 + length) {
        return frames;
      }
      frames.push(parsePayload(this.buf.subarray(4, 4 + length)));
      this.buf = this.buf.subarray(4 + length);
    }
  }

  /** Bytes of the frame currently in progress (0 at a frame boundary). */
  get pendingBytes(): number {
    return this.buf.length;
  }
}

export function isErrorBody(body: string): boolean {
  return body.startsWith(ERROR_PREFIX);
}
