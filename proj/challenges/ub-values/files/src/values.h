#ifndef VALUES_H
#define VALUES_H

/* Position of `key` in the calibration table, or -1 if absent. */
int index_of(int key);

/* Table entry at `position`, or -1 when out of range. */
int value_at(int position);

#endif
