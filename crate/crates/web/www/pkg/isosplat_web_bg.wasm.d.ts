/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const scene_iteration: (a: number) => bigint;
export const scene_new: (a: number, b: number, c: number) => [number, number, number];
export const scene_point_count: (a: number) => number;
export const scene_render_model: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const scene_render_partitions: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const scene_render_truth: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const scene_start_training: (a: number, b: number) => [number, number];
export const scene_train: (a: number, b: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
