export {
  ERROR_PREFIX,
  MAX_PAYLOAD,
  ProtocolError,
  FrameDecoder,
  encodeFrame,
  parsePayload,
  isErrorBody,
} from "./protocol.js";
export type { Frame } from "./protocol.js";

export {
  CAPTURE_MODALITIES,
  Client,
  ClientError,
  CommandError,
  ConnectError,
  TransportError,
  fmtReal,
} from "./client.js";
export type { Bounds, Modality, Triple } from "./client.js";

export { POSES, runAlg1 } from "./alg1.js";
