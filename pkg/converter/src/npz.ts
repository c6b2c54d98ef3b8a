/**
 * Minimal NPZ (zip of .npy) reader.
 *
 * Only what MedMNIST archives need: uint8 arrays, C-order, npy format 1.0,
 * zip entries stored or deflated. No external dependencies - deflate goes
 * through node:zlib.
 */

import { inflateRawSync } from "node:zlib";

export interface NpyArray {
  /** flat C-order bytes */
  data: Uint8Array;
  shape: number[];
  descr: string;
}

const ZIP_EOCD = 0x06054b50;
const ZIP_CENTRAL = 0x02014b50;
const ZIP_LOCAL = 0x04034b50;

interface ZipEntry {
  name: string;
  method: number;
  compressedSize: number;
  uncompressedSize: number;
  localOffset: number;
}

function readCentralDirectory(buf: Buffer): ZipEntry[] {
  // EOCD sits at the end, possibly preceded by a comment (<= 64 KiB)
  let eocd = -1;
  const lo = Math.max(0, buf.length - 65557);
  for (let i = buf.length - 22; i >= lo; i--) {
    if (buf.readUInt32LE(i) === ZIP_EOCD) {
      eocd = i;
      break;
    }
  }
  if (eocd < 0) throw new Error("not a zip archive: end-of-central-directory missing");
  const count = buf.readUInt16LE(eocd + 10);
  let offset = buf.readUInt32LE(eocd + 16);
  const entries: ZipEntry[] = [];
  for (let i = 0; i < count; i++) {
    if (buf.readUInt32LE(offset) !== ZIP_CENTRAL) {
      throw new Error(`corrupt zip: bad central directory record at ${offset}`);
    }
    const method = buf.readUInt16LE(offset + 10);
    const compressedSize = buf.readUInt32LE(offset + 20);
    const uncompressedSize = buf.readUInt32LE(offset + 24);
    const nameLen = buf.readUInt16LE(offset + 28);
    const extraLen = buf.readUInt16LE(offset + 30);
    const commentLen = buf.readUInt16LE(offset + 32);
    const localOffset = buf.readUInt32LE(offset + 42);
    const name = buf.toString("utf-8", offset + 46, offset + 46 + nameLen);
    entries.push({ name, method, compressedSize, uncompressedSize, localOffset });
    offset += 46 + nameLen + extraLen + commentLen;
  }
  return entries;
}

function entryBytes(buf: Buffer, entry: ZipEntry): Buffer {
  if (buf.readUInt32LE(entry.localOffset) !== ZIP_LOCAL) {
    throw new Error(`corrupt zip: bad local header for ${entry.name}`);
  }
  const nameLen = buf.readUInt16LE(entry.localOffset + 26);
  const extraLen = buf.readUInt16LE(entry.localOffset + 28);
  const start = entry.localOffset + 30 + nameLen + extraLen;
  const raw = buf.subarray(start, start + entry.compressedSize);
  if (entry.method === 0) return Buffer.from(raw);
  if (entry.method === 8) {
    const out = inflateRawSync(raw);
    if (out.length !== entry.uncompressedSize) {
      throw new Error(`corrupt zip: ${entry.name} inflated to ${out.length} bytes`);
    }
    return out;
  }
  throw new Error(`unsupported zip compression method ${entry.method} for ${entry.name}`);
}

export function parseNpy(buf: Buffer): NpyArray {
  if (buf.length < 10 || buf.toString("latin1", 0, 6) !== "\x93NUMPY") {
    throw new Error("not an npy file: bad magic");
  }
  const major = buf.readUInt8(6);
  const headerLen = major === 1 ? buf.readUInt16LE(8) : buf.readUInt32LE(8);
  const headerEnd = (major === 1 ? 10 : 12) + headerLen;
  const header = buf.toString("latin1", major === 1 ? 10 : 12, headerEnd);

  const descrMatch = header.match(/'descr'\s*:\s*'([^']+)'/);
  const fortranMatch = header.match(/'fortran_order'\s*:\s*(True|False)/);
  const shapeMatch = header.match(/'shape'\s*:\s*\(([^)]*)\)/);
  if (!descrMatch || !fortranMatch || !shapeMatch) {
    throw new Error(`unparseable npy header: ${header}`);
  }
  if (fortranMatch[1] === "True") throw new Error("fortran-order npy not supported");
  const shape = shapeMatch[1]
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => parseInt(s, 10));
  const count = shape.reduce((a, b) => a * b, 1);
  const descr = descrMatch[1];
  if (descr !== "|u1" && descr !== "<u1" && descr !== "u1") {
    throw new Error(`expected uint8 array, got dtype ${descr}`);
  }
  const data = buf.subarray(headerEnd, headerEnd + count);
  if (data.length !== count) {
    throw new Error(`npy truncated: expected ${count} bytes, found ${data.length}`);
  }
  return { data: new Uint8Array(data), shape, descr };
}

/** Read every .npy member of an .npz archive, keyed without the extension. */
export function parseNpz(buf: Buffer): Record<string, NpyArray> {
  const out: Record<string, NpyArray> = {};
  for (const entry of readCentralDirectory(buf)) {
    if (!entry.name.endsWith(".npy")) continue;
    out[entry.name.slice(0, -4)] = parseNpy(entryBytes(buf, entry));
  }
  return out;
}
