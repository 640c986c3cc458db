int c[N], i, a;
i = 0;
c[i++] = a + 3;
c[i++] = a * 2;
