/**
 * ORNC dataset container writer (and a reader for tests).
 *
 * Layout, all integers little-endian:
 *   "ORNC" | version u32 | count u32 | channels u32 | height u32 |
 *   width u32 | num_classes u32 | count*C*H*W pixel bytes | count labels.
 */

export const ORNC_VERSION = 1;
const HEADER_BYTES = 28;

export interface OrncDataset {
  count: number;
  channels: number;
  height: number;
  width: number;
  numClasses: number;
  /** count * channels * height * width bytes, N,C,H,W row-major */
  pixels: Uint8Array;
  labels: Uint8Array;
}

export function encodeOrnc(ds: OrncDataset): Buffer {
  const imageBytes = ds.channels * ds.height * ds.width;
  if (ds.pixels.length !== ds.count * imageBytes) {
    throw new Error(`pixel block is ${ds.pixels.length} bytes, want ${ds.count * imageBytes}`);
  }
  if (ds.labels.length !== ds.count) {
    throw new Error(`label block is ${ds.labels.length} entries, want ${ds.count}`);
  }
  for (const label of ds.labels) {
    if (label >= ds.numClasses) {
      throw new Error(`label ${label} out of range for ${ds.numClasses} classes`);
    }
  }
  const buf = Buffer.alloc(HEADER_BYTES + ds.pixels.length + ds.labels.length);
  buf.write("ORNC", 0, "latin1");
  buf.writeUInt32LE(ORNC_VERSION, 4);
  buf.writeUInt32LE(ds.count, 8);
  buf.writeUInt32LE(ds.channels, 12);
  buf.writeUInt32LE(ds.height, 16);
  buf.writeUInt32LE(ds.width, 20);
  buf.writeUInt32LE(ds.numClasses, 24);
  Buffer.from(ds.pixels).copy(buf, HEADER_BYTES);
  Buffer.from(ds.labels).copy(buf, HEADER_BYTES + ds.pixels.length);
  return buf;
}

export function decodeOrnc(buf: Buffer): OrncDataset {
  if (buf.toString("latin1", 0, 4) !== "ORNC") throw new Error("bad ORNC magic");
  const version = buf.readUInt32LE(4);
  if (version !== ORNC_VERSION) throw new Error(`unsupported ORNC version ${version}`);
  const count = buf.readUInt32LE(8);
  const channels = buf.readUInt32LE(12);
  const height = buf.readUInt32LE(16);
  const width = buf.readUInt32LE(20);
  const numClasses = buf.readUInt32LE(24);
  const imageBytes = channels * height * width;
  const expected = HEADER_BYTES + count * imageBytes + count;
  if (buf.length !== expected) {
    throw new Error(`ORNC length mismatch: expected ${expected} bytes, found ${buf.length}`);
  }
  return {
    count,
    channels,
    height,
    width,
    numClasses,
    pixels: new Uint8Array(buf.subarray(HEADER_BYTES, HEADER_BYTES + count * imageBytes)),
    labels: new Uint8Array(buf.subarray(HEADER_BYTES + count * imageBytes)),
  };
}
