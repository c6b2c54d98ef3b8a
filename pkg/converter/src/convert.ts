/**
 * MedMNIST .npz -> ORNC conversion.
 *
 * Reads a locally supplied archive with train/val/test_images and *_labels
 * entries, copies pixels byte for byte (grayscale stays single-channel,
 * HWC color is transposed to CHW), and writes train.ornc / val.ornc /
 * test.ornc plus a key=value manifest into the output directory.
 *
 * The multi-label chest archive is reduced to binary any-finding (1) vs
 * no-finding (0); every other dataset keeps its single label column.
 */

import { createHash } from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";

import { NpyArray, parseNpz } from "./npz";
import { encodeOrnc } from "./ornc";

export const DATASET_CLASSES: Record<string, number> = {
  blood: 8,
  breast: 2,
  chest: 2, // collapsed from 14 finding flags to any-finding vs none
  derma: 7,
  pneumonia: 2,
  retina: 5,
};

export const SPLITS = ["train", "val", "test"] as const;
export type Split = (typeof SPLITS)[number];

export interface ConversionJob {
  archivePath: string;
  name: string;
  outDir: string;
}

export interface SplitResult {
  split: Split;
  count: number;
  path: string;
  sha256: string;
}

function transposeHwcToChw(images: NpyArray): Uint8Array {
  const [n, h, w, c] = images.shape;
  const out = new Uint8Array(n * c * h * w);
  const src = images.data;
  for (let i = 0; i < n; i++) {
    const srcBase = i * h * w * c;
    const dstBase = i * c * h * w;
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        for (let ch = 0; ch < c; ch++) {
          out[dstBase + ch * h * w + y * w + x] = src[srcBase + (y * w + x) * c + ch];
        }
      }
    }
  }
  return out;
}

function collapseChestLabels(labels: NpyArray): Uint8Array {
  const [n, flags] = labels.shape;
  const out = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    let any = 0;
    for (let f = 0; f < flags; f++) {
      if (labels.data[i * flags + f] !== 0) any = 1;
    }
    out[i] = any;
  }
  return out;
}

function flattenLabels(labels: NpyArray, name: string): Uint8Array {
  if (name === "chest" && labels.shape.length === 2 && labels.shape[1] > 1) {
    return collapseChestLabels(labels);
  }
  if (labels.shape.length === 2 && labels.shape[1] === 1) return labels.data;
  if (labels.shape.length === 1) return labels.data;
  throw new Error(`unexpected label shape [${labels.shape}] for dataset '${name}'`);
}

export function convertSplit(
  images: NpyArray,
  labels: NpyArray,
  name: string
): { pixels: Uint8Array; labels: Uint8Array; channels: number; height: number; width: number } {
  let channels: number;
  let height: number;
  let width: number;
  let pixels: Uint8Array;
  if (images.shape.length === 3) {
    [, height, width] = images.shape;
    channels = 1;
    pixels = images.data;
  } else if (images.shape.length === 4 && images.shape[3] === 3) {
    [, height, width] = images.shape;
    channels = 3;
    pixels = transposeHwcToChw(images);
  } else {
    throw new Error(`unexpected image shape [${images.shape}] for dataset '${name}'`);
  }
  const flat = flattenLabels(labels, name);
  if (flat.length !== images.shape[0]) {
    throw new Error(`label count ${flat.length} does not match image count ${images.shape[0]}`);
  }
  const numClasses = DATASET_CLASSES[name];
  for (const label of flat) {
    if (label >= numClasses) {
      throw new Error(`label ${label} out of range for '${name}' (${numClasses} classes)`);
    }
  }
  return { pixels, labels: flat, channels, height, width };
}

export function convert(job: ConversionJob): SplitResult[] {
  const numClasses = DATASET_CLASSES[job.name];
  if (numClasses === undefined) {
    throw new Error(
      `unknown dataset '${job.name}'; expected one of ${Object.keys(DATASET_CLASSES).join(", ")}`
    );
  }
  const archive = fs.readFileSync(job.archivePath);
  const entries = parseNpz(archive);
  for (const split of SPLITS) {
    for (const suffix of ["images", "labels"]) {
      if (!(`${split}_${suffix}` in entries)) {
        throw new Error(`archive is missing entry '${split}_${suffix}'`);
      }
    }
  }
  fs.mkdirSync(job.outDir, { recursive: true });
  const results: SplitResult[] = [];
  const manifest: string[] = [
    "command=convert",
    `dataset=${job.name}`,
    `archive=${job.archivePath}`,
    `sha256_archive=${createHash("sha256").update(archive).digest("hex")}`,
    `num_classes=${numClasses}`,
  ];
  let resolution: number | null = null;
  for (const split of SPLITS) {
    const images = entries[`${split}_images`];
    const labels = entries[`${split}_labels`];
    const { pixels, labels: flat, channels, height, width } = convertSplit(
      images,
      labels,
      job.name
    );
    if (height !== width || (height !== 28 && height !== 224)) {
      throw new Error(`unsupported resolution ${height}x${width}; expected 28 or 224 square`);
    }
    if (resolution === null) resolution = height;
    else if (resolution !== height) throw new Error("splits disagree on resolution");
    const encoded = encodeOrnc({
      count: images.shape[0],
      channels,
      height,
      width,
      numClasses,
      pixels,
      labels: flat,
    });
    const outPath = path.join(job.outDir, `${split}.ornc`);
    fs.writeFileSync(outPath, encoded);
    const sha256 = createHash("sha256").update(encoded).digest("hex");
    results.push({ split, count: images.shape[0], path: outPath, sha256 });
    manifest.push(`count_${split}=${images.shape[0]}`);
    manifest.push(`artifact_${split}=${outPath}`);
    manifest.push(`sha256_${split}=${sha256}`);
  }
  manifest.push(`resolution=${resolution}`);
  fs.writeFileSync(path.join(job.outDir, "manifest.txt"), manifest.join("\n") + "\n");
  return results;
}

function parseArgs(argv: string[]): ConversionJob {
  const values: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (!flag.startsWith("--") || value === undefined) {
      throw new Error(`usage: convert --archive PATH --name NAME --out DIR (got '${flag}')`);
    }
    values[flag.slice(2)] = value;
  }
  for (const required of ["archive", "name", "out"]) {
    if (!(required in values)) throw new Error(`missing required flag --${required}`);
  }
  const known = new Set(["archive", "name", "out"]);
  for (const key of Object.keys(values)) {
    if (!known.has(key)) throw new Error(`unknown flag --${key}`);
  }
  return { archivePath: values.archive, name: values.name, outDir: values.out };
}

export function main(argv: string[]): number {
  let job: ConversionJob;
  try {
    job = parseArgs(argv);
  } catch (err) {
    console.error((err as Error).message);
    return 2;
  }
  try {
    const results = convert(job);
    for (const r of results) {
      console.log(`${r.split}: ${r.count} images -> ${r.path}`);
    }
    return 0;
  } catch (err) {
    console.error(`conversion failed: ${(err as Error).message}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
