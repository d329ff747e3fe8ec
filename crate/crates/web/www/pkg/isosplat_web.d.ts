/* tslint:disable */
/* eslint-disable */

export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    iteration(): bigint;
    /**
     * `kind` is `sphere`, `gyroid` or `two-blob`.
     */
    constructor(kind: string, dims: number);
    point_count(): number;
    render_model(azimuth: number, elevation: number, resolution: number): Uint8Array;
    /**
     * Ground truth recolored by owning partition; points that are also a
     * neighbor's ghost are drawn darker.
     */
    render_partitions(partitions: number, margin_scale: number, azimuth: number, elevation: number, resolution: number): Uint8Array;
    render_truth(azimuth: number, elevation: number, resolution: number): Uint8Array;
    /**
     * Seeds one splat per point and renders training views on a small orbit.
     */
    start_training(resolution: number): void;
    /**
     * Runs `steps` optimizer steps, cycling through the views, and returns
     * the last loss.
     */
    train(steps: number): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly scene_iteration: (a: number) => bigint;
    readonly scene_new: (a: number, b: number, c: number) => [number, number, number];
    readonly scene_point_count: (a: number) => number;
    readonly scene_render_model: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly scene_render_partitions: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly scene_render_truth: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly scene_start_training: (a: number, b: number) => [number, number];
    readonly scene_train: (a: number, b: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
