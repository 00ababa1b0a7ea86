int x;
int y = 3;

void f(int x)
{
  x = 1;
  y = x;
}

void g(void)
{
  x = 2;
}

int h(int y, int z)
{
  return x + y + z;
}
